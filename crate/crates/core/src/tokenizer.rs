//! Word-level vocabulary with a greedy longest-match subword fallback and
//! optional clone doubles.
//!
//! Token id layout:
//!
//! ```text
//! 0 <pad> | 1 <s> | 2 <unk> | base tokens (n) | clone tokens (n)
//! ```
//!
//! Base tokens are whole words, word-initial pieces, and continuation
//! pieces prefixed with `##`. Clone token `k` is base token `k` with the
//! clone marker appended, so `clone_id(id) = id + n`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::clone::CloneMap;
use crate::error::{Error, IoContext, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const N_SPECIAL: usize = 3;
pub const CONTINUATION: &str = "##";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    /// Most frequent corpus words kept as whole-word tokens.
    pub max_word_vocab: usize,
    /// Multi-character fallback pieces learned from the remaining words.
    pub max_pieces: usize,
    pub min_piece_count: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { max_word_vocab: 2000, max_pieces: 300, min_piece_count: 2 }
    }
}

/// Half-open token range `[start, end)` covering one word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
}

/// Split text into words: whitespace separates words and every ASCII
/// punctuation character is its own word. A marker directly following a
/// punctuation character stays attached to it.
pub fn split_words<'a>(text: &'a str, marker: Option<&str>) -> Vec<&'a str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        let mut iter = chunk.char_indices().peekable();
        while let Some((i, c)) = iter.next() {
            if !is_punct(c) {
                continue;
            }
            if start < i {
                out.push(&chunk[start..i]);
            }
            let mut end = i + c.len_utf8();
            if let Some(m) = marker {
                if chunk[end..].starts_with(m) {
                    end += m.len();
                    while iter.peek().is_some_and(|&(j, _)| j < end) {
                        iter.next();
                    }
                }
            }
            out.push(&chunk[i..end]);
            start = end;
        }
        if start < chunk.len() {
            out.push(&chunk[start..]);
        }
    }
    out
}

/// Word frequencies over `docs`, most frequent first, ties by word.
pub fn count_words<'a, I>(docs: I) -> Vec<(String, u64)>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in docs {
        for w in split_words(doc, None) {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    let mut words: Vec<(String, u64)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    words
}

/// Canonical form of a text: its words joined by single spaces.
pub fn canonical(text: &str, marker: Option<&str>) -> String {
    split_words(text, marker).join(" ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    n_base: usize,
    clones: Option<CloneMap>,
    word_counts: Vec<(String, u64)>,
    max_piece_chars: usize,
}

impl Vocab {
    fn assemble(base: Vec<String>, marker: Option<&str>, word_counts: Vec<(String, u64)>) -> Result<Self> {
        let mut tokens: Vec<String> = [PAD, BOS, UNK].iter().map(|s| s.to_string()).collect();
        let n_base = base.len();
        let clones = match marker {
            Some(m) => Some(CloneMap::build(&base, m)?),
            None => None,
        };
        tokens.extend(base);
        if let Some(c) = &clones {
            tokens.extend(c.clone_tokens().iter().cloned());
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::data(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        let max_piece_chars = tokens[N_SPECIAL..N_SPECIAL + n_base]
            .iter()
            .map(|t| t.strip_prefix(CONTINUATION).unwrap_or(t).chars().count())
            .max()
            .unwrap_or(1);
        Ok(Self { tokens, ids, n_base, clones, word_counts, max_piece_chars })
    }

    /// Learn a base vocabulary from documents. Every character seen in the
    /// corpus gets a word-initial and a continuation piece, so corpus text
    /// never encodes to `<unk>`.
    pub fn train<'a, I>(docs: I, cfg: &TokenizerConfig) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let words = count_words(docs);
        if words.is_empty() {
            return Err(Error::data("cannot train a vocabulary on an empty corpus"));
        }
        for (w, _) in &words {
            if w == PAD || w == BOS || w == UNK {
                return Err(Error::data(format!("corpus word {w:?} collides with a special token")));
            }
        }

        let keep = cfg.max_word_vocab.min(words.len());
        let mut piece_counts: HashMap<String, u64> = HashMap::new();
        for (w, c) in &words[keep..] {
            let chars: Vec<char> = w.chars().collect();
            for len in 2..=4usize.min(chars.len()) {
                for s in 0..=chars.len() - len {
                    let body: String = chars[s..s + len].iter().collect();
                    let piece = if s == 0 { body } else { format!("{CONTINUATION}{body}") };
                    *piece_counts.entry(piece).or_default() += c;
                }
            }
        }
        let mut pieces: Vec<(String, u64)> =
            piece_counts.into_iter().filter(|(_, c)| *c >= cfg.min_piece_count).collect();
        pieces.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        pieces.truncate(cfg.max_pieces);

        let chars: BTreeSet<char> = words.iter().flat_map(|(w, _)| w.chars()).collect();
        let mut base = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut add = |t: String, base: &mut Vec<String>| {
            if seen.insert(t.clone()) {
                base.push(t);
            }
        };
        for (w, _) in &words[..keep] {
            add(w.clone(), &mut base);
        }
        for (p, _) in pieces {
            add(p, &mut base);
        }
        for &c in &chars {
            add(c.to_string(), &mut base);
        }
        for &c in &chars {
            add(format!("{CONTINUATION}{c}"), &mut base);
        }
        Self::assemble(base, None, words)
    }

    /// Replace the word inventory, e.g. with counts over a wider source
    /// corpus than the one the vocabulary was trained on.
    pub fn with_inventory(mut self, word_counts: Vec<(String, u64)>) -> Self {
        self.word_counts = word_counts;
        self
    }

    /// Append a clone double for every base token.
    pub fn with_clones(self, marker: &str) -> Result<Self> {
        if self.clones.is_some() {
            return Err(Error::usage("vocabulary already has clone tokens"));
        }
        let base = self.base_tokens().to_vec();
        Self::assemble(base, Some(marker), self.word_counts)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn base_tokens(&self) -> &[String] {
        &self.tokens[N_SPECIAL..N_SPECIAL + self.n_base]
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn marker(&self) -> Option<&str> {
        self.clones.as_ref().map(CloneMap::marker)
    }

    pub fn clone_map(&self) -> Option<&CloneMap> {
        self.clones.as_ref()
    }

    /// Corpus word inventory with counts, most frequent first.
    pub fn word_counts(&self) -> &[(String, u64)] {
        &self.word_counts
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < N_SPECIAL
    }

    pub fn is_clone(&self, id: u32) -> bool {
        self.clones.is_some() && (id as usize) >= N_SPECIAL + self.n_base && (id as usize) < self.tokens.len()
    }

    /// Clone of a base token id.
    pub fn clone_id(&self, id: u32) -> Option<u32> {
        let i = id as usize;
        (self.clones.is_some() && (N_SPECIAL..N_SPECIAL + self.n_base).contains(&i)).then(|| id + self.n_base as u32)
    }

    /// Base token of a clone id.
    pub fn base_id(&self, id: u32) -> Option<u32> {
        self.is_clone(id).then(|| id - self.n_base as u32)
    }

    /// Token-wise clone of a base sequence. Special tokens pass through.
    pub fn clone_seq(&self, ids: &[u32]) -> Result<Vec<u32>> {
        if self.clones.is_none() {
            return Err(Error::usage("vocabulary has no clone tokens"));
        }
        ids.iter()
            .map(|&id| {
                if self.is_special(id) {
                    return Ok(id);
                }
                self.clone_id(id).ok_or_else(|| {
                    Error::data(format!(
                        "token {} is not in the base vocabulary",
                        self.token(id).map_or_else(|| format!("#{id}"), |t| format!("{t:?}"))
                    ))
                })
            })
            .collect()
    }

    /// Maps clone tokens back to base tokens; other ids pass through.
    pub fn unclone_seq(&self, ids: &[u32]) -> Vec<u32> {
        ids.iter().map(|&id| self.base_id(id).unwrap_or(id)).collect()
    }

    fn encode_base_word(&self, word: &str, out: &mut Vec<u32>) {
        if !word.starts_with(CONTINUATION) {
            if let Some(&id) = self.ids.get(word) {
                if !self.is_special(id) && !self.is_clone(id) {
                    out.push(id);
                    return;
                }
            }
        }
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut pos = 0;
        let mut buf = String::new();
        while pos < chars.len() {
            let mut matched = None;
            let longest = self.max_piece_chars.min(chars.len() - pos);
            for len in (1..=longest).rev() {
                let a = chars[pos].0;
                let b = chars.get(pos + len).map_or(word.len(), |&(j, _)| j);
                buf.clear();
                if pos > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.push_str(&word[a..b]);
                if let Some(&id) = self.ids.get(buf.as_str()) {
                    if !self.is_special(id) && !self.is_clone(id) {
                        matched = Some((id, len));
                        break;
                    }
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => {
                    out.push(UNK_ID);
                    pos += 1;
                }
            }
        }
    }

    /// Encode one word. A word ending in the clone marker encodes as the
    /// clones of its base word's tokens.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let mut out = Vec::new();
        self.encode_word_into(word, &mut out);
        out
    }

    fn encode_word_into(&self, word: &str, out: &mut Vec<u32>) {
        if let Some(m) = self.marker() {
            if let Some(base) = word.strip_suffix(m) {
                if !base.is_empty() && !base.contains(m) {
                    let start = out.len();
                    self.encode_base_word(base, out);
                    for id in &mut out[start..] {
                        if let Some(c) = self.clone_id(*id) {
                            *id = c;
                        }
                    }
                    return;
                }
            }
        }
        self.encode_base_word(word, out);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        self.encode_with_spans(text).0
    }

    /// Token ids plus one span per word; spans tile the id sequence.
    pub fn encode_with_spans(&self, text: &str) -> (Vec<u32>, Vec<Span>) {
        let mut ids = Vec::new();
        let mut spans = Vec::new();
        for w in split_words(text, self.marker()) {
            let start = ids.len();
            self.encode_word_into(w, &mut ids);
            spans.push(Span { start, end: ids.len() });
        }
        (ids, spans)
    }

    /// Render ids as canonical text. `<pad>` and `<s>` are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut words: Vec<(String, bool)> = Vec::new();
        for &id in ids {
            if id == PAD_ID || id == BOS_ID {
                continue;
            }
            let (tok, clone) = match self.base_id(id) {
                Some(b) => (self.tokens[b as usize].as_str(), true),
                None => (self.token(id).unwrap_or(UNK), false),
            };
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if !words.is_empty() && id != UNK_ID => words.last_mut().expect("non-empty").0.push_str(rest),
                _ => words.push((tok.to_string(), clone)),
            }
        }
        let marker = self.marker().unwrap_or("");
        words
            .into_iter()
            .map(|(w, c)| if c { format!("{w}{marker}") } else { w })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn inventory_path(vocab_path: &Path) -> PathBuf {
        let mut name = vocab_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".words.tsv");
        vocab_path.with_file_name(name)
    }

    /// Write one token per line, plus the word inventory sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).at(dir)?;
        }
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        fs::write(path, text).at(path)?;
        let inv = Self::inventory_path(path);
        let mut text = String::new();
        for (w, c) in &self.word_counts {
            text.push_str(&format!("{w}\t{c}\n"));
        }
        fs::write(&inv, text).at(&inv)
    }

    /// Load a vocabulary. With `marker`, tokens carrying it form the clone
    /// block, which must mirror the base block exactly.
    pub fn load(path: &Path, marker: Option<&str>) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < N_SPECIAL || lines[..N_SPECIAL] != [PAD, BOS, UNK] {
            return Err(Error::data(format!("{}: vocabulary must start with {PAD}, {BOS}, {UNK}", path.display())));
        }
        let body = &lines[N_SPECIAL..];
        let split = match marker {
            Some(m) => body.iter().position(|t| t.contains(m)).unwrap_or(body.len()),
            None => body.len(),
        };
        let base: Vec<String> = body[..split].iter().map(|s| s.to_string()).collect();
        let clone_block = &body[split..];
        let use_marker = if clone_block.is_empty() { None } else { marker };
        if let Some(m) = use_marker {
            if clone_block.len() != base.len()
                || clone_block.iter().zip(&base).any(|(c, b)| c.strip_suffix(m) != Some(b.as_str()))
            {
                return Err(Error::data(format!("{}: clone block does not mirror the base block", path.display())));
            }
        }
        let inv = Self::inventory_path(path);
        let mut word_counts = Vec::new();
        if inv.exists() {
            for (n, line) in fs::read_to_string(&inv).at(&inv)?.lines().enumerate() {
                let (w, c) = line
                    .split_once('\t')
                    .and_then(|(w, c)| Some((w, c.parse::<u64>().ok()?)))
                    .ok_or_else(|| Error::data(format!("{}:{}: expected word<TAB>count", inv.display(), n + 1)))?;
                word_counts.push((w.to_string(), c));
            }
        }
        Self::assemble(base, use_marker, word_counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny(max_words: usize, max_pieces: usize) -> Vocab {
        let cfg = TokenizerConfig { max_word_vocab: max_words, max_pieces, min_piece_count: 1 };
        Vocab::train(["he he plays"], &cfg).unwrap()
    }

    #[test]
    fn frequent_word_is_one_token_and_tail_word_decomposes() {
        let v = tiny(1, 0);
        assert_eq!(v.encode_word("he").len(), 1);
        let ids = v.encode_word("plays");
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["p", "##l", "##a", "##y", "##s"]);
        assert_eq!(v.decode(&ids), "plays");
    }

    #[test]
    fn learned_pieces_are_used_greedily() {
        let v = tiny(1, 50);
        let toks: Vec<&str> = v.encode_word("plays").iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["play", "##s"]);
    }

    #[test]
    fn punctuation_is_split() {
        assert_eq!(split_words("Hi, there.", None), ["Hi", ",", "there", "."]);
        assert_eq!(split_words("a§ .§ b", Some("§")), ["a§", ".§", "b"]);
        assert_eq!(split_words("x.§y", Some("§")), ["x", ".§", "y"]);
        assert_eq!(canonical("  a  b.", None), "a b .");
    }

    #[test]
    fn clone_word_encodes_as_clones_of_base_pieces() {
        let v = tiny(1, 0).with_clones("§").unwrap();
        let base = v.encode("he plays .");
        let clone = v.encode("he§ plays§");
        assert_eq!(clone, v.clone_seq(&v.encode("he plays")).unwrap());
        assert!(clone.iter().all(|&i| v.is_clone(i)));
        assert_eq!(v.decode(&clone), "he§ plays§");
        assert_eq!(v.unclone_seq(&clone), v.encode("he plays"));
        assert!(base.contains(&UNK_ID));
        assert_eq!(v.len(), N_SPECIAL + 2 * v.n_base());
    }

    #[test]
    fn clone_seq_rejects_clone_input() {
        let v = tiny(1, 0).with_clones("§").unwrap();
        let c = v.encode("he§");
        let err = v.clone_seq(&c).unwrap_err();
        assert!(err.to_string().contains("he§"));
    }

    #[test]
    fn save_load_round_trip() {
        let v = tiny(2, 5).with_clones("§").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p, Some("§")).unwrap(), v);
        let plain = Vocab::load(&p, None);
        assert!(plain.is_ok());
    }

    #[test]
    fn corrupt_clone_block_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        fs::write(&p, "<pad>\n<s>\n<unk>\na\nb\nb§\na§\n").unwrap();
        assert_eq!(Vocab::load(&p, Some("§")).unwrap_err().exit_code(), 3);
        fs::write(&p, "a\n").unwrap();
        assert_eq!(Vocab::load(&p, None).unwrap_err().exit_code(), 3);
    }

    fn corpus_vocab() -> Vocab {
        let corpus = ["the cat sat on the mat .", "a dog , a log ; zebra quiz ? x"];
        let cfg = TokenizerConfig { max_word_vocab: 4, max_pieces: 10, min_piece_count: 1 };
        let mut v = Vocab::train(corpus, &cfg).unwrap();
        let all: String = ('a'..='z').chain(".,;?!".chars()).map(|c| format!("{c} ")).collect();
        let extra = Vocab::train([all.as_str()], &TokenizerConfig { max_word_vocab: 0, max_pieces: 0, min_piece_count: 1 }).unwrap();
        let mut base = v.base_tokens().to_vec();
        for t in extra.base_tokens() {
            if v.id(t).is_none() {
                base.push(t.clone());
            }
        }
        v = Vocab::assemble(base, Some("§"), v.word_counts.clone()).unwrap();
        v
    }

    proptest! {
        #[test]
        fn decode_inverts_encode_on_canonical_text(text in "[a-z .,;?!]{0,40}") {
            let v = corpus_vocab();
            let canon = canonical(&text, None);
            prop_assert_eq!(v.decode(&v.encode(&canon)), canon.clone());
            let (ids, spans) = v.encode_with_spans(&canon);
            let mut at = 0;
            for s in &spans {
                prop_assert_eq!(s.start, at);
                prop_assert!(s.end > s.start);
                at = s.end;
            }
            prop_assert_eq!(at, ids.len());
        }

        #[test]
        fn clone_text_mirrors_token_count(text in "[a-z .,;?!]{0,40}") {
            let v = corpus_vocab();
            let canon = canonical(&text, None);
            let cloned = crate::corpus::clone::clone_words(&canon, "§");
            let ids = v.encode(&canon);
            let cids = v.encode(&cloned);
            prop_assert_eq!(cids.len(), ids.len());
            prop_assert_eq!(&cids, &v.clone_seq(&ids).unwrap());
            prop_assert_eq!(v.decode(&cids), cloned);
        }
    }
}
