//! Knowledge triplets, their statement documents, and CLKA probe items.
//!
//! Knowledge spec file (TSV, one triplet per line, `#` comments allowed):
//!
//! ```text
//! period  subject  relation  object  frequency
//! ```
//!
//! Probe files append three distractor objects.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::corpus::clone::clone_words;
use crate::corpus::natural::{Lexicon, WordMaker};
use crate::error::{Error, IoContext, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectKind {
    Place,
    Language,
    Organization,
    Instrument,
}

#[derive(Clone, Copy, Debug)]
pub struct RelationDef {
    pub id: &'static str,
    pub template: &'static str,
    pub paraphrase: &'static str,
    pub object_kind: ObjectKind,
}

/// Relation inventory shared by the natural corpus and the knowledge set.
/// Every template ends with its object slot followed by a period.
pub const RELATIONS: [RelationDef; 5] = [
    RelationDef {
        id: "born_in",
        template: "{s} was born in {o} .",
        paraphrase: "the birthplace of {s} is {o} .",
        object_kind: ObjectKind::Place,
    },
    RelationDef {
        id: "native_language",
        template: "the native language of {s} is {o} .",
        paraphrase: "{s} speaks {o} natively .",
        object_kind: ObjectKind::Language,
    },
    RelationDef {
        id: "works_for",
        template: "{s} works for {o} .",
        paraphrase: "the employer of {s} is {o} .",
        object_kind: ObjectKind::Organization,
    },
    RelationDef {
        id: "citizen_of",
        template: "{s} is a citizen of {o} .",
        paraphrase: "{s} holds citizenship of {o} .",
        object_kind: ObjectKind::Place,
    },
    RelationDef {
        id: "plays",
        template: "{s} plays the {o} .",
        paraphrase: "{s} often plays the {o} .",
        object_kind: ObjectKind::Instrument,
    },
];

pub fn relation_index(id: &str) -> Option<usize> {
    RELATIONS.iter().position(|r| r.id == id)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Base,
    Clone,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Base => "base",
            Language::Clone => "clone",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub period: usize,
    pub subject: String,
    pub relation: usize,
    pub object: String,
    pub frequency: usize,
}

impl Triplet {
    pub fn statement(&self, paraphrase: bool) -> String {
        let r = &RELATIONS[self.relation];
        let tpl = if paraphrase { r.paraphrase } else { r.template };
        tpl.replace("{s}", &self.subject).replace("{o}", &self.object)
    }

    pub fn statement_with(&self, object: &str) -> String {
        RELATIONS[self.relation].template.replace("{s}", &self.subject).replace("{o}", object)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeConfig {
    pub n_periods: usize,
    /// Distinct triplets per frequency level per period.
    pub per_level: usize,
    pub levels: Vec<usize>,
    /// Share of statement copies rendered with the paraphrase template.
    pub paraphrase_share: f64,
    pub distractors: usize,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self { n_periods: 4, per_level: 25, levels: vec![1, 4, 16, 64], paraphrase_share: 0.0, distractors: 3 }
    }
}

impl KnowledgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_periods == 0 || self.per_level == 0 || self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::usage("knowledge: n_periods, per_level, and every level must be positive"));
        }
        if !(0.0..=1.0).contains(&self.paraphrase_share) {
            return Err(Error::usage("knowledge: paraphrase_share must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeSet {
    pub triplets: Vec<Triplet>,
}

/// One knowledge statement document.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeDoc {
    pub triplet: usize,
    pub text: String,
}

impl KnowledgeSet {
    /// Draw `per_level × levels × n_periods` triplets. Subjects are fresh
    /// nonce words disjoint from the lexicon; objects come from the lexicon
    /// class matching the relation.
    pub fn generate(cfg: &KnowledgeConfig, lex: &Lexicon, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(seed, "knowledge", 0);
        let mut maker = WordMaker::new(lex.words().clone());
        let mut triplets = Vec::new();
        for period in 0..cfg.n_periods {
            for &frequency in &cfg.levels {
                for _ in 0..cfg.per_level {
                    let relation = (triplets.len()) % RELATIONS.len();
                    let pool = lex.objects(RELATIONS[relation].object_kind);
                    if pool.len() <= cfg.distractors {
                        return Err(Error::usage(format!(
                            "knowledge: relation {} has {} candidate objects, need more than {} distractors",
                            RELATIONS[relation].id,
                            pool.len(),
                            cfg.distractors
                        )));
                    }
                    let subject = maker.make(&mut rng, 2, 3);
                    let object = pool.choose(&mut rng).expect("non-empty").clone();
                    triplets.push(Triplet { period, subject, relation, object, frequency });
                }
            }
        }
        Ok(Self { triplets })
    }

    pub fn n_periods(&self) -> usize {
        self.triplets.iter().map(|t| t.period + 1).max().unwrap_or(0)
    }

    pub fn levels(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.triplets.iter().map(|t| t.frequency).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Statement documents for one period: each triplet repeated
    /// `frequency` times, in triplet order.
    pub fn documents(&self, period: usize, paraphrase_share: f64) -> Vec<KnowledgeDoc> {
        let mut out = Vec::new();
        for (i, t) in self.triplets.iter().enumerate().filter(|(_, t)| t.period == period) {
            let n_para = (t.frequency as f64 * paraphrase_share).round() as usize;
            for k in 0..t.frequency {
                out.push(KnowledgeDoc { triplet: i, text: t.statement(k >= t.frequency - n_para) });
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::from("# period\tsubject\trelation\tobject\tfrequency\n");
        for t in &self.triplets {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                t.period, t.subject, RELATIONS[t.relation].id, t.object, t.frequency
            ));
        }
        fs::write(path, s).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows = read_tsv(path, 5)?;
        let triplets = rows
            .into_iter()
            .map(|(line, f)| parse_triplet(path, line, &f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { triplets })
    }
}

fn read_tsv(path: &Path, min_fields: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<String> = line.split('\t').map(str::to_string).collect();
        if f.len() < min_fields {
            return Err(Error::data(format!(
                "{}:{}: expected at least {min_fields} tab-separated fields, found {}",
                path.display(),
                n + 1,
                f.len()
            )));
        }
        out.push((n + 1, f));
    }
    Ok(out)
}

fn parse_triplet(path: &Path, line: usize, f: &[String]) -> Result<Triplet> {
    let bad = |what: &str| Error::data(format!("{}:{line}: {what}", path.display()));
    let period = f[0].parse().map_err(|_| bad("period must be a non-negative integer"))?;
    let relation = relation_index(&f[2]).ok_or_else(|| bad(&format!("unknown relation {:?}", f[2])))?;
    let frequency: usize = f[4].parse().map_err(|_| bad("frequency must be a positive integer"))?;
    if frequency == 0 || f[1].is_empty() || f[3].is_empty() {
        return Err(bad("empty subject/object or zero frequency"));
    }
    Ok(Triplet { period, subject: f[1].clone(), relation, object: f[3].clone(), frequency })
}

/// A CLKA item: the true statement object and its distractors.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub triplet: Triplet,
    pub distractors: Vec<String>,
}

impl Probe {
    /// Candidate statements in `language`, correct one first.
    pub fn statements(&self, language: Language, marker: &str) -> Vec<String> {
        std::iter::once(&self.triplet.object)
            .chain(&self.distractors)
            .map(|o| {
                let s = self.triplet.statement_with(o);
                match language {
                    Language::Base => s,
                    Language::Clone => clone_words(&s, marker),
                }
            })
            .collect()
    }
}

/// Distractors are distinct objects from the relation's candidate pool,
/// never equal to the true object.
pub fn make_probes(set: &KnowledgeSet, lex: &Lexicon, distractors: usize, seed: u64) -> Result<Vec<Probe>> {
    let mut probes = Vec::with_capacity(set.triplets.len());
    for (i, t) in set.triplets.iter().enumerate() {
        let pool: Vec<&String> =
            lex.objects(RELATIONS[t.relation].object_kind).iter().filter(|o| **o != t.object).collect();
        if pool.len() < distractors {
            return Err(Error::data(format!("not enough distractor objects for relation {}", RELATIONS[t.relation].id)));
        }
        let mut rng = stream(seed, "probe", i as u64);
        let picked = index::sample(&mut rng, pool.len(), distractors);
        probes.push(Probe { triplet: t.clone(), distractors: picked.iter().map(|j| pool[j].clone()).collect() });
    }
    Ok(probes)
}

pub fn save_probes(probes: &[Probe], path: &Path) -> Result<()> {
    let mut s = String::from("# period\tsubject\trelation\tobject\tfrequency\tdistractors...\n");
    for p in probes {
        let t = &p.triplet;
        s.push_str(&format!("{}\t{}\t{}\t{}\t{}", t.period, t.subject, RELATIONS[t.relation].id, t.object, t.frequency));
        for d in &p.distractors {
            s.push('\t');
            s.push_str(d);
        }
        s.push('\n');
    }
    fs::write(path, s).at(path)
}

pub fn load_probes(path: &Path) -> Result<Vec<Probe>> {
    let rows = read_tsv(path, 6)?;
    rows.into_iter()
        .map(|(line, f)| {
            let triplet = parse_triplet(path, line, &f)?;
            let distractors: Vec<String> = f[5..].to_vec();
            let uniq: HashSet<&String> = distractors.iter().collect();
            if uniq.len() != distractors.len() || uniq.contains(&triplet.object) {
                return Err(Error::data(format!("{}:{line}: distractors must be distinct from each other and the object", path.display())));
            }
            Ok(Probe { triplet, distractors })
        })
        .collect()
}
