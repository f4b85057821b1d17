//! Multilingual alignment table: source words mapped to translations.
//!
//! Table file format (TSV, `#` comments allowed):
//!
//! ```text
//! source_word  language  translation
//! ```
//!
//! Translations may contain spaces. Duplicate rows merge.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::corpus::clone::clone_words;
use crate::error::{Error, IoContext, Result};
use crate::tokenizer::Vocab;

pub const CLONE_LANGUAGE: &str = "clone";

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AlignmentTable {
    entries: BTreeMap<String, BTreeSet<(String, String)>>,
    freq: HashMap<String, u64>,
}

impl AlignmentTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: &str, language: &str, translation: &str) -> Result<()> {
        let translation = translation.trim();
        if source.is_empty() || source.contains(char::is_whitespace) {
            return Err(Error::data(format!("alignment source {source:?} must be a single word")));
        }
        if translation.is_empty() {
            return Err(Error::data(format!("empty translation for {source:?}")));
        }
        self.entries
            .entry(source.to_string())
            .or_default()
            .insert((language.to_string(), translation.to_string()));
        Ok(())
    }

    /// One entry per corpus word, translated to its clone rendering.
    /// Frequencies come from the vocabulary's word inventory.
    pub fn from_clone_map(vocab: &Vocab) -> Result<Self> {
        let marker = vocab.marker().ok_or_else(|| Error::usage("vocabulary has no clone tokens"))?;
        if vocab.word_counts().is_empty() {
            return Err(Error::data("vocabulary carries no word inventory"));
        }
        let mut t = Self::new();
        for (w, c) in vocab.word_counts() {
            t.insert(w, CLONE_LANGUAGE, &clone_words(w, marker))?;
            t.freq.insert(w.clone(), *c);
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let mut t = Self::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.splitn(3, '\t').collect();
            if f.len() != 3 {
                return Err(Error::data(format!(
                    "{}:{}: expected source<TAB>language<TAB>translation",
                    path.display(),
                    n + 1
                )));
            }
            t.insert(f[0], f[1], f[2]).map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (w, trs) in &self.entries {
            for (lang, tr) in trs {
                s.push_str(&format!("{w}\t{lang}\t{tr}\n"));
            }
        }
        fs::write(path, s).at(path)
    }

    /// Attach corpus frequencies; words absent from `counts` get zero.
    pub fn with_frequencies(mut self, counts: &[(String, u64)]) -> Self {
        self.freq = counts.iter().cloned().collect();
        self
    }

    /// Drop entries whose source word is not in `inventory`.
    pub fn restrict_to(&mut self, inventory: &[(String, u64)]) {
        let keep: std::collections::HashSet<&str> = inventory.iter().map(|(w, _)| w.as_str()).collect();
        self.entries.retain(|w, _| keep.contains(w.as_str()));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frequency(&self, word: &str) -> u64 {
        self.freq.get(word).copied().unwrap_or(0)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn translations(&self, word: &str) -> Vec<&str> {
        self.entries.get(word).map_or_else(Vec::new, |s| s.iter().map(|(_, t)| t.as_str()).collect())
    }

    /// The `ceil(beta × n)` most frequent source words; ties break
    /// lexicographically. The result is sorted lexicographically.
    pub fn select_beta(&self, beta: f64) -> Result<BTreeSet<String>> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::usage(format!("beta must lie in (0, 1], got {beta}")));
        }
        let n = (beta * self.entries.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        let mut ranked: Vec<&String> = self.entries.keys().collect();
        ranked.sort_by(|a, b| self.frequency(b).cmp(&self.frequency(a)).then_with(|| a.cmp(b)));
        Ok(ranked.into_iter().take(n).cloned().collect())
    }

    /// Copy of the table restricted to `words`.
    pub fn subset(&self, words: &BTreeSet<String>) -> Self {
        Self {
            entries: self.entries.iter().filter(|(w, _)| words.contains(*w)).map(|(w, t)| (w.clone(), t.clone())).collect(),
            freq: self.freq.clone(),
        }
    }
}

/// A sampled translation pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub source: String,
    pub translation: String,
}

/// Sample `batch_size` entries from `seen`, without replacement when
/// possible, each with a uniformly chosen translation.
pub fn sample_pair_batch<R: Rng>(
    table: &AlignmentTable,
    seen: &[String],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Pair>> {
    if seen.is_empty() || batch_size == 0 {
        return Err(Error::usage("cannot sample pairs from an empty seen set"));
    }
    let picks: Vec<usize> = if batch_size <= seen.len() {
        index::sample(rng, seen.len(), batch_size).into_vec()
    } else {
        (0..batch_size).map(|_| rng.gen_range(0..seen.len())).collect()
    };
    picks
        .into_iter()
        .map(|i| {
            let w = &seen[i];
            let tr = table.translations(w);
            let t = tr.choose(rng).ok_or_else(|| Error::data(format!("word {w:?} has no translation")))?;
            Ok(Pair { source: w.clone(), translation: t.to_string() })
        })
        .collect()
}
