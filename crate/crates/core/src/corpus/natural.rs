//! A seeded generator for English-like text.
//!
//! Content words are pronounceable nonce words grouped into semantic
//! categories; function words are real English. Each category owns its
//! nouns, verbs, and adjectives, so a sentence's category is recoverable
//! from its content words. Named people carry fixed attributes, which the
//! relation sentences state consistently across the corpus.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::knowledge::{ObjectKind, RELATIONS};
use crate::error::{Error, IoContext, Result};
use crate::rng::{stream, StreamRng};

pub const CATEGORY_NAMES: [&str; 8] =
    ["animal", "tool", "food", "vehicle", "plant", "garment", "instrument", "building"];

/// Category whose nouns serve as objects of the `plays` relation.
pub const INSTRUMENT_CATEGORY: usize = 6;

const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "of", "is", "are", "was", "and", "in", "on", "with", "to", "by", "for", "from", "at", "he", "she",
    "they", "it", "this", "that", "very", "often", "never", "always", "not", "some", "many", "every", "near",
    "under", "kind", "born", "works", "native", "language", "citizen", "plays", "speaks", "natively", "holds",
    "citizenship", "employer", "birthplace", "capital", "we", "you", "one", "two", "also", "there", "all",
];

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "cr", "dr",
    "fl", "gr", "pl", "pr", "st", "tr", "sh", "ch", "th", "bl", "sk", "sl", "sn", "sp",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou", "oo", "ie"];
const CODAS: &[&str] = &["", "", "", "n", "r", "l", "s", "t", "m", "k", "nd", "st", "rk", "ng"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    pub nouns_per_category: usize,
    pub verbs_per_category: usize,
    pub adjectives_per_category: usize,
    pub names: usize,
    pub places: usize,
    pub languages: usize,
    pub organizations: usize,
    pub zipf_exponent: f64,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            nouns_per_category: 60,
            verbs_per_category: 12,
            adjectives_per_category: 12,
            names: 120,
            places: 40,
            languages: 16,
            organizations: 24,
            zipf_exponent: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaturalConfig {
    pub docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Per-sentence probability of leaving the document's topic.
    pub topic_drift: f64,
    /// Share of sentences that state a relation about a named person.
    pub relation_share: f64,
    pub lexicon: LexiconConfig,
}

impl Default for NaturalConfig {
    fn default() -> Self {
        Self {
            docs: 20_000,
            min_sentences: 3,
            max_sentences: 6,
            topic_drift: 0.15,
            relation_share: 0.2,
            lexicon: LexiconConfig::default(),
        }
    }
}

impl NaturalConfig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.lexicon;
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return Err(Error::usage("natural: need 1 <= min_sentences <= max_sentences"));
        }
        if !(0.0..=1.0).contains(&self.topic_drift) || !(0.0..=1.0).contains(&self.relation_share) {
            return Err(Error::usage("natural: topic_drift and relation_share must lie in [0, 1]"));
        }
        if l.nouns_per_category < 2
            || l.verbs_per_category == 0
            || l.adjectives_per_category == 0
            || l.names == 0
            || l.places == 0
            || l.languages == 0
            || l.organizations == 0
        {
            return Err(Error::usage("natural: every lexicon class needs at least one word (two nouns per category)"));
        }
        if !(l.zipf_exponent >= 0.0) {
            return Err(Error::usage("natural: zipf_exponent must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub adjectives: Vec<String>,
}

/// Fixed attributes of a named person, one object per relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub name: String,
    pub attributes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub categories: Vec<Category>,
    pub people: Vec<Person>,
    pub places: Vec<String>,
    pub languages: Vec<String>,
    pub organizations: Vec<String>,
    #[serde(skip)]
    words: HashSet<String>,
}

/// Draws pronounceable nonce words that avoid a growing exclusion set.
pub struct WordMaker {
    taken: HashSet<String>,
}

impl WordMaker {
    pub fn new(taken: HashSet<String>) -> Self {
        let mut taken = taken;
        taken.extend(FUNCTION_WORDS.iter().map(|s| s.to_string()));
        taken.extend(CATEGORY_NAMES.iter().map(|s| s.to_string()));
        Self { taken }
    }

    pub fn make(&mut self, rng: &mut StreamRng, min_syllables: usize, max_syllables: usize) -> String {
        loop {
            let n = rng.gen_range(min_syllables..=max_syllables);
            let mut w = String::new();
            for _ in 0..n {
                w.push_str(ONSETS.choose(rng).expect("non-empty"));
                w.push_str(VOWELS.choose(rng).expect("non-empty"));
                w.push_str(CODAS.choose(rng).expect("non-empty"));
            }
            if w.len() >= 3 && self.taken.insert(w.clone()) {
                return w;
            }
        }
    }

    pub fn taken(&self) -> &HashSet<String> {
        &self.taken
    }
}

impl Lexicon {
    pub fn generate(cfg: &LexiconConfig, seed: u64) -> Self {
        let mut rng = stream(seed, "lexicon", 0);
        let mut maker = WordMaker::new(HashSet::new());
        let categories = CATEGORY_NAMES
            .iter()
            .map(|&name| Category {
                name: name.to_string(),
                nouns: (0..cfg.nouns_per_category).map(|_| maker.make(&mut rng, 1, 3)).collect(),
                verbs: (0..cfg.verbs_per_category).map(|_| maker.make(&mut rng, 1, 2)).collect(),
                adjectives: (0..cfg.adjectives_per_category).map(|_| maker.make(&mut rng, 1, 3)).collect(),
            })
            .collect::<Vec<_>>();
        let places: Vec<String> = (0..cfg.places).map(|_| maker.make(&mut rng, 2, 3)).collect();
        let languages: Vec<String> = (0..cfg.languages).map(|_| maker.make(&mut rng, 2, 3)).collect();
        let organizations: Vec<String> = (0..cfg.organizations).map(|_| maker.make(&mut rng, 2, 3)).collect();
        let names: Vec<String> = (0..cfg.names).map(|_| maker.make(&mut rng, 2, 3)).collect();
        let mut lex = Self {
            categories,
            people: Vec::new(),
            places,
            languages,
            organizations,
            words: HashSet::new(),
        };
        lex.people = names
            .into_iter()
            .map(|name| {
                let attributes = RELATIONS.iter().map(|r| lex.objects(r.object_kind).choose(&mut rng).expect("non-empty").clone()).collect();
                Person { name, attributes }
            })
            .collect();
        lex.words = maker.taken().clone();
        lex
    }

    /// Rebuild the word set after deserialization.
    fn index_words(&mut self) {
        let mut w = WordMaker::new(HashSet::new()).taken;
        for c in &self.categories {
            w.extend(c.nouns.iter().chain(&c.verbs).chain(&c.adjectives).cloned());
        }
        w.extend(self.places.iter().chain(&self.languages).chain(&self.organizations).cloned());
        w.extend(self.people.iter().map(|p| p.name.clone()));
        self.words = w;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::data(e.to_string()))?;
        fs::write(path, text).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let mut lex: Self =
            serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: malformed lexicon: {e}", path.display())))?;
        if lex.categories.len() != CATEGORY_NAMES.len() || lex.people.iter().any(|p| p.attributes.len() != RELATIONS.len()) {
            return Err(Error::data(format!("{}: lexicon does not match the built-in categories and relations", path.display())));
        }
        lex.index_words();
        Ok(lex)
    }

    /// Candidate objects for a relation's object slot.
    pub fn objects(&self, kind: ObjectKind) -> &[String] {
        match kind {
            ObjectKind::Place => &self.places,
            ObjectKind::Language => &self.languages,
            ObjectKind::Organization => &self.organizations,
            ObjectKind::Instrument => &self.categories[INSTRUMENT_CATEGORY].nouns,
        }
    }

    /// Every word the generator may emit, function words included.
    pub fn words(&self) -> &HashSet<String> {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

/// Sentence and document sampler over a [`Lexicon`].
pub struct Grammar<'a> {
    pub lex: &'a Lexicon,
    zipf: HashMap<usize, WeightedIndex<f64>>,
    exponent: f64,
}

impl<'a> Grammar<'a> {
    pub fn new(lex: &'a Lexicon, exponent: f64) -> Self {
        Self { lex, zipf: HashMap::new(), exponent }
    }

    fn pick<'w>(&mut self, rng: &mut StreamRng, words: &'w [String]) -> &'w str {
        &words[self.pick_index(rng, words.len())]
    }

    /// A sentence whose content words all come from category `c`.
    pub fn category_sentence(&mut self, rng: &mut StreamRng, c: usize) -> String {
        let lex = self.lex;
        let cat = &lex.categories[c];
        let (nouns, verbs, adjs) = (&cat.nouns, &cat.verbs, &cat.adjectives);
        match rng.gen_range(0..6) {
            0 => format!(
                "the {} {} {} the {} .",
                self.pick(rng, adjs),
                self.pick(rng, nouns),
                self.pick(rng, verbs),
                self.pick(rng, nouns)
            ),
            1 => format!("a {} is a kind of {} .", self.pick(rng, nouns), cat.name),
            2 => format!("the {} is very {} .", self.pick(rng, nouns), self.pick(rng, adjs)),
            3 => format!(
                "the {} and the {} are {} .",
                self.pick(rng, nouns),
                self.pick(rng, nouns),
                self.pick(rng, adjs)
            ),
            4 => format!("every {} {} some {} .", self.pick(rng, nouns), self.pick(rng, verbs), self.pick(rng, nouns)),
            _ => {
                let pron = ["he", "she", "they", "we"].choose(rng).expect("non-empty");
                let adv = ["often", "never", "always", "also"].choose(rng).expect("non-empty");
                format!("{pron} {adv} {} the {} {} .", self.pick(rng, verbs), self.pick(rng, adjs), self.pick(rng, nouns))
            }
        }
    }

    fn people_sentence(&mut self, rng: &mut StreamRng, c: usize) -> String {
        let lex = self.lex;
        let person = &lex.people[self.pick_index(rng, lex.people.len())];
        if rng.gen_bool(0.7) {
            let r = rng.gen_range(0..RELATIONS.len());
            let rel = &RELATIONS[r];
            let tpl = if rng.gen_bool(0.8) { rel.template } else { rel.paraphrase };
            return tpl.replace("{s}", &person.name).replace("{o}", &person.attributes[r]);
        }
        let cat = &lex.categories[c];
        let verb = self.pick(rng, &cat.verbs);
        let adj = self.pick(rng, &cat.adjectives);
        let noun = self.pick(rng, &cat.nouns);
        let place = self.pick(rng, &lex.places);
        format!("{} {verb} a {adj} {noun} near {place} .", person.name)
    }

    fn pick_index(&mut self, rng: &mut StreamRng, n: usize) -> usize {
        let exponent = self.exponent;
        let dist = self.zipf.entry(n).or_insert_with(|| {
            WeightedIndex::new((0..n).map(|i| 1.0 / ((i + 1) as f64).powf(exponent))).expect("non-empty")
        });
        dist.sample(rng)
    }

    pub fn document(&mut self, rng: &mut StreamRng, cfg: &NaturalConfig) -> String {
        let n_cat = self.lex.categories.len();
        let topic = rng.gen_range(0..n_cat);
        let n = rng.gen_range(cfg.min_sentences..=cfg.max_sentences);
        let mut sentences = Vec::with_capacity(n);
        for _ in 0..n {
            let c = if rng.gen_bool(cfg.topic_drift) { rng.gen_range(0..n_cat) } else { topic };
            let s = if rng.gen_bool(cfg.relation_share) {
                self.people_sentence(rng, c)
            } else {
                self.category_sentence(rng, c)
            };
            sentences.push(s);
        }
        sentences.join(" ")
    }
}

/// Generate the lexicon and `cfg.docs` documents, one string per document.
pub fn generate_corpus(cfg: &NaturalConfig, seed: u64) -> Result<(Lexicon, Vec<String>)> {
    cfg.validate()?;
    let lex = Lexicon::generate(&cfg.lexicon, seed);
    let mut grammar = Grammar::new(&lex, cfg.lexicon.zipf_exponent);
    let mut rng = stream(seed, "natural-docs", 0);
    let docs = (0..cfg.docs).map(|_| grammar.document(&mut rng, cfg)).collect();
    Ok((lex, docs))
}

/// One example of the category-agreement task: do both sentences talk
/// about the same category?
#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub first: String,
    pub second: String,
    pub same: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairTask {
    pub train: Vec<PairExample>,
    pub test: Vec<PairExample>,
}

/// Balanced category-agreement task; labels alternate so each split is
/// exactly half positive (rounding down).
pub fn category_pair_task(lex: &Lexicon, n_train: usize, n_test: usize, zipf: f64, seed: u64) -> PairTask {
    let mut g = Grammar::new(lex, zipf);
    let n_cat = lex.categories.len();
    let mut make = |n: usize, split: &str| -> Vec<PairExample> {
        let mut rng = stream(seed, split, 0);
        (0..n)
            .map(|i| {
                let same = i % 2 == 0;
                let a = rng.gen_range(0..n_cat);
                let b = if same { a } else { (a + rng.gen_range(1..n_cat)) % n_cat };
                PairExample { first: g.category_sentence(&mut rng, a), second: g.category_sentence(&mut rng, b), same }
            })
            .collect()
    };
    let train = make(n_train, "zsclt-train");
    let test = make(n_test, "zsclt-test");
    PairTask { train, test }
}

/// Pair examples as TSV: `first<TAB>second<TAB>same` with `same` 0 or 1.
pub fn save_pairs(examples: &[PairExample], path: &Path) -> Result<()> {
    let mut s = String::new();
    for e in examples {
        s.push_str(&format!("{}\t{}\t{}\n", e.first, e.second, e.same as u8));
    }
    fs::write(path, s).at(path)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairExample>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let same = match f.as_slice() {
            [_, _, "1"] => true,
            [_, _, "0"] => false,
            _ => return Err(Error::data(format!("{}:{}: expected first<TAB>second<TAB>0|1", path.display(), n + 1))),
        };
        out.push(PairExample { first: f[0].to_string(), second: f[1].to_string(), same });
    }
    Ok(out)
}
