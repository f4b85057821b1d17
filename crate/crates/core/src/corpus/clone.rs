//! The clone language: a bijective, marker-tagged copy of every base token.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Default script marker appended to every clone token.
pub const DEFAULT_MARKER: &str = "§";

/// Bijection between base tokens and their clones.
///
/// Local ids `0..n` are base tokens and `n..2n` their clones, so
/// `clone_of(i) = i + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct CloneMap {
    marker: String,
    base: Vec<String>,
    clones: Vec<String>,
    index: HashMap<String, usize>,
}

impl CloneMap {
    pub fn build(vocab: &[String], marker: &str) -> Result<Self> {
        if marker.is_empty() {
            return Err(Error::usage("clone marker must be non-empty"));
        }
        if vocab.is_empty() {
            return Err(Error::data("cannot clone an empty vocabulary"));
        }
        let mut index = HashMap::with_capacity(vocab.len() * 2);
        for (i, t) in vocab.iter().enumerate() {
            if t.contains(marker) {
                return Err(Error::data(format!("token {t:?} already contains the clone marker {marker:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate base token {t:?}")));
            }
        }
        let n = vocab.len();
        let clones: Vec<String> = vocab.iter().map(|t| format!("{t}{marker}")).collect();
        for (i, c) in clones.iter().enumerate() {
            index.insert(c.clone(), n + i);
        }
        Ok(Self { marker: marker.to_string(), base: vocab.to_vec(), clones, index })
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn base_tokens(&self) -> &[String] {
        &self.base
    }

    pub fn clone_tokens(&self) -> &[String] {
        &self.clones
    }

    pub fn clone_of(&self, base_id: usize) -> usize {
        assert!(base_id < self.base.len(), "clone_of: not a base id");
        base_id + self.base.len()
    }

    pub fn base_of(&self, clone_id: usize) -> Option<usize> {
        let n = self.base.len();
        (n..2 * n).contains(&clone_id).then(|| clone_id - n)
    }

    pub fn token(&self, id: usize) -> &str {
        let n = self.base.len();
        if id < n {
            &self.base[id]
        } else {
            &self.clones[id - n]
        }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn clone_token(&self, base: &str) -> Option<&str> {
        self.id(base).filter(|&i| i < self.base.len()).map(|i| self.clones[i].as_str())
    }

    /// A token string is clone-script iff it carries the marker.
    pub fn is_clone_token(&self, token: &str) -> bool {
        token.contains(self.marker.as_str())
    }

    /// Token-wise clone of a sequence of base tokens (string form).
    pub fn clone_tokens_of(&self, doc: &[&str]) -> Result<Vec<String>> {
        doc.iter()
            .map(|t| {
                self.clone_token(t)
                    .map(str::to_string)
                    .ok_or_else(|| Error::data(format!("token {t:?} is not in the base vocabulary")))
            })
            .collect()
    }
}

/// Text-level clone rendering: every whitespace-separated word gets the marker.
///
/// `"he plays ."` with marker `§` becomes `"he§ plays§ .§"`. Tokenizing a
/// rendered clone word yields the clones of the base word's subwords.
pub fn clone_words(text: &str, marker: &str) -> String {
    text.split_whitespace().map(|w| format!("{w}{marker}")).collect::<Vec<_>>().join(" ")
}

/// Inverse of [`clone_words`] (words without the marker pass through).
pub fn unclone_words(text: &str, marker: &str) -> String {
    text.split_whitespace()
        .map(|w| w.strip_suffix(marker).unwrap_or(w))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn affix_rule() {
        let m = CloneMap::build(&strings(&["he", "plays"]), "§").unwrap();
        assert_eq!(m.clone_token("he"), Some("he§"));
        assert_eq!(m.clone_token("plays"), Some("plays§"));
        assert_eq!(m.clone_tokens_of(&["he", "plays"]).unwrap(), strings(&["he§", "plays§"]));
        assert!(m.clone_tokens_of(&[]).unwrap().is_empty());
    }

    #[test]
    fn bijection_and_disjointness() {
        let vocab = strings(&["a", "b", "##c", ".", "the"]);
        let m = CloneMap::build(&vocab, "§").unwrap();
        for i in 0..m.len() {
            let c = m.clone_of(i);
            assert_ne!(c, i);
            assert_eq!(m.base_of(c), Some(i));
        }
        let base: HashSet<_> = m.base_tokens().iter().collect();
        assert!(m.clone_tokens().iter().all(|c| !base.contains(c)));
        assert!(m.clone_tokens().iter().all(|c| m.is_clone_token(c)));
        assert!(m.base_tokens().iter().all(|c| !m.is_clone_token(c)));
    }

    #[test]
    fn marker_collision_is_rejected() {
        let err = CloneMap::build(&strings(&["ok", "bad§"]), "§").unwrap_err();
        assert!(err.to_string().contains("bad§"));
    }

    #[test]
    fn unknown_token_is_named() {
        let m = CloneMap::build(&strings(&["he"]), "§").unwrap();
        let err = m.clone_tokens_of(&["he", "piano"]).unwrap_err();
        assert!(err.to_string().contains("piano"));
    }

    #[test]
    fn text_rendering_round_trips() {
        let s = "he plays the piano well .";
        let c = clone_words(s, "§");
        assert_eq!(c, "he§ plays§ the§ piano§ well§ .§");
        assert_eq!(unclone_words(&c, "§"), s);
    }
}
