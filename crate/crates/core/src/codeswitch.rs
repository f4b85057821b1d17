//! Word-level codeswitching of LM training rows.
//!
//! A row of `N` tokens becomes `N - 1` (input, target, mask) positions.
//! When word `x¹..xᵐ` is replaced by `y¹..yⁿ`:
//!
//! * `InputOnly`: the position predicting `y¹` keeps target `x¹`, positions
//!   predicting `y²..yⁿ` are masked, everything else is ordinary next-token
//!   prediction over the switched input.
//! * `Vanilla`: targets are `y¹..yⁿ`, all unmasked.
//! * `Off`: no switching.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::AlignmentTable;
use crate::error::{Error, Result};
use crate::tokenizer::{Span, Vocab, UNK_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeswitchMode {
    Off,
    InputOnly,
    Vanilla,
}

impl std::str::FromStr for CodeswitchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "input_only" => Ok(Self::InputOnly),
            "vanilla" => Ok(Self::Vanilla),
            _ => Err(Error::usage(format!("unknown codeswitch mode {s:?} (expected off, input_only, vanilla)"))),
        }
    }
}

impl CodeswitchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Off => "off",
            Self::InputOnly => "input_only",
            Self::Vanilla => "vanilla",
        }
    }
}

/// One switched word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchRecord {
    /// Index of the word span in the original row.
    pub word: usize,
    pub original: Vec<u32>,
    pub replacement: Vec<u32>,
    /// Start of the replacement in the switched row.
    pub start: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeswitchedBatch {
    pub input: Vec<u32>,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
    pub switches: Vec<SwitchRecord>,
    /// Words that were candidates for switching.
    pub eligible: usize,
}

impl CodeswitchedBatch {
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    /// Keep at most `n` positions.
    pub fn truncate(&mut self, n: usize) {
        self.input.truncate(n);
        self.targets.truncate(n);
        self.mask.truncate(n);
        self.switches.retain(|s| s.start < n + 1);
    }
}

fn check_spans(tokens: &[u32], spans: &[Span]) -> Result<()> {
    let mut at = 0;
    for (i, s) in spans.iter().enumerate() {
        if s.start != at || s.end <= s.start {
            return Err(Error::data(format!("word span {i} ({}..{}) does not continue at token {at}", s.start, s.end)));
        }
        at = s.end;
    }
    if at != tokens.len() {
        return Err(Error::data(format!("word spans cover {at} of {} tokens", tokens.len())));
    }
    Ok(())
}

/// Apply the given `(word index, replacement)` switches. `ignore` fills
/// masked target slots.
pub fn apply_switches(
    tokens: &[u32],
    spans: &[Span],
    switches: &[(usize, Vec<u32>)],
    mode: CodeswitchMode,
    ignore: u32,
) -> Result<CodeswitchedBatch> {
    check_spans(tokens, spans)?;
    let mut by_word: HashMap<usize, &Vec<u32>> = HashMap::new();
    if mode != CodeswitchMode::Off {
        for (w, rep) in switches {
            if *w >= spans.len() {
                return Err(Error::data(format!("switch names word {w} of a {}-word row", spans.len())));
            }
            if rep.is_empty() {
                return Err(Error::data(format!("empty replacement for word {w}")));
            }
            by_word.insert(*w, rep);
        }
    }
    let mut seq = Vec::with_capacity(tokens.len());
    // Target and mask for the position that predicts each token of `seq`.
    let mut supervision: Vec<(u32, bool)> = Vec::with_capacity(tokens.len());
    let mut records = Vec::new();
    for (w, s) in spans.iter().enumerate() {
        let orig = &tokens[s.start..s.end];
        match by_word.get(&w) {
            None => {
                seq.extend_from_slice(orig);
                supervision.extend(orig.iter().map(|&t| (t, true)));
            }
            Some(rep) => {
                records.push(SwitchRecord { word: w, original: orig.to_vec(), replacement: rep.to_vec(), start: seq.len() });
                seq.extend_from_slice(rep);
                match mode {
                    CodeswitchMode::InputOnly => {
                        supervision.push((orig[0], true));
                        supervision.extend(std::iter::repeat_n((ignore, false), rep.len() - 1));
                    }
                    _ => supervision.extend(rep.iter().map(|&t| (t, true))),
                }
            }
        }
    }
    let n = seq.len().saturating_sub(1);
    let (targets, mask) = supervision.into_iter().skip(1).unzip();
    seq.truncate(n);
    Ok(CodeswitchedBatch { input: seq, targets, mask, switches: records, eligible: 0 })
}

/// Token-level switch dictionary: source token sequence to candidate
/// replacements.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SwitchTable {
    map: HashMap<Vec<u32>, Vec<Vec<u32>>>,
}

impl SwitchTable {
    /// Entries for the `seen` words of `table`. With `bidirectional`, every
    /// single-word translation also switches back to its source.
    pub fn build(table: &AlignmentTable, seen: &BTreeSet<String>, vocab: &Vocab, bidirectional: bool) -> Result<Self> {
        let mut map: HashMap<Vec<u32>, BTreeSet<Vec<u32>>> = HashMap::new();
        for w in seen {
            let src = vocab.encode_word(w);
            for tr in table.translations(w) {
                let tgt: Vec<u32> = tr.split_whitespace().flat_map(|x| vocab.encode_word(x)).collect();
                if tgt.is_empty() || tgt.contains(&UNK_ID) {
                    return Err(Error::data(format!("translation {tr:?} of {w:?} is not tokenizable")));
                }
                if tgt == src {
                    continue;
                }
                map.entry(src.clone()).or_default().insert(tgt.clone());
                if bidirectional && !tr.contains(char::is_whitespace) {
                    map.entry(tgt).or_default().insert(src.clone());
                }
            }
        }
        Ok(Self { map: map.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect() })
    }

    pub fn from_pairs(pairs: &[(Vec<u32>, Vec<u32>)]) -> Self {
        let mut map: HashMap<Vec<u32>, Vec<Vec<u32>>> = HashMap::new();
        for (s, t) in pairs {
            map.entry(s.clone()).or_default().push(t.clone());
        }
        Self { map }
    }

    pub fn get(&self, word: &[u32]) -> Option<&[Vec<u32>]> {
        self.map.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Switch each eligible word independently with probability `ratio`,
/// choosing uniformly among its translations. The random draws do not
/// depend on `mode`, so paired runs switch the same words.
pub fn codeswitch_augment<R: Rng>(
    tokens: &[u32],
    spans: &[Span],
    table: &SwitchTable,
    ratio: f64,
    mode: CodeswitchMode,
    ignore: u32,
    rng: &mut R,
) -> Result<CodeswitchedBatch> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::usage(format!("codeswitch ratio must lie in [0, 1], got {ratio}")));
    }
    check_spans(tokens, spans)?;
    let mut switches = Vec::new();
    let mut eligible = 0;
    if mode != CodeswitchMode::Off && ratio > 0.0 {
        for (w, s) in spans.iter().enumerate() {
            if let Some(cands) = table.get(&tokens[s.start..s.end]) {
                eligible += 1;
                if rng.gen_bool(ratio) {
                    let pick = if cands.len() == 1 { 0 } else { rng.gen_range(0..cands.len()) };
                    switches.push((w, cands[pick].clone()));
                }
            }
        }
    }
    let mut out = apply_switches(tokens, spans, &switches, mode, ignore)?;
    out.eligible = eligible;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    // He plays the piano well  ->  ids 10 11 12 13 14; Kla vier -> 20 21
    fn sentence() -> (Vec<u32>, Vec<Span>) {
        let toks = vec![10, 11, 12, 13, 14];
        let spans = (0..5).map(|i| Span { start: i, end: i + 1 }).collect();
        (toks, spans)
    }

    #[test]
    fn input_only_keeps_original_first_target_and_masks_the_rest() {
        let (t, s) = sentence();
        let b = apply_switches(&t, &s, &[(3, vec![20, 21])], CodeswitchMode::InputOnly, 0).unwrap();
        assert_eq!(b.input, [10, 11, 12, 20, 21]);
        assert_eq!(b.targets, [11, 12, 13, 0, 14]);
        assert_eq!(b.mask, [true, true, true, false, true]);
        assert_eq!(b.switches[0].start, 3);
    }

    #[test]
    fn vanilla_supervises_the_translation() {
        let (t, s) = sentence();
        let b = apply_switches(&t, &s, &[(3, vec![20, 21])], CodeswitchMode::Vanilla, 0).unwrap();
        assert_eq!(b.input, [10, 11, 12, 20, 21]);
        assert_eq!(b.targets, [11, 12, 20, 21, 14]);
        assert!(b.mask.iter().all(|&m| m));
    }

    #[test]
    fn zero_ratio_is_plain_lm() {
        let (t, s) = sentence();
        let table = SwitchTable::from_pairs(&[(vec![13], vec![20, 21])]);
        let mut rng = stream(0, "cs", 0);
        for mode in [CodeswitchMode::InputOnly, CodeswitchMode::Vanilla, CodeswitchMode::Off] {
            let b = codeswitch_augment(&t, &s, &table, 0.0, mode, 0, &mut rng).unwrap();
            assert_eq!(b.input, &t[..4]);
            assert_eq!(b.targets, &t[1..]);
            assert!(b.mask.iter().all(|&m| m));
        }
        let b = codeswitch_augment(&t, &s, &table, 1.0, CodeswitchMode::Off, 0, &mut rng).unwrap();
        assert_eq!(b.targets, &t[1..]);
    }

    #[test]
    fn misaligned_spans_are_rejected() {
        let (t, mut s) = sentence();
        s[2].start = 3;
        assert_eq!(apply_switches(&t, &s, &[], CodeswitchMode::InputOnly, 0).unwrap_err().exit_code(), 3);
        let (t, s) = sentence();
        assert!(apply_switches(&t, &s, &[(1, vec![])], CodeswitchMode::Vanilla, 0).is_err());
    }

    #[test]
    fn realized_switch_share_tracks_ratio() {
        let toks: Vec<u32> = (0..4000).map(|i| 10 + (i % 3)).collect();
        let spans: Vec<Span> = (0..4000).map(|i| Span { start: i, end: i + 1 }).collect();
        let table = SwitchTable::from_pairs(&[(vec![10], vec![50]), (vec![11], vec![51, 52])]);
        let mut rng = stream(3, "cs", 0);
        let b = codeswitch_augment(&toks, &spans, &table, 0.05, CodeswitchMode::InputOnly, 0, &mut rng).unwrap();
        let share = b.switches.len() as f64 / b.eligible as f64;
        assert!((share - 0.05).abs() < 0.015, "share {share}");
        let masked = b.mask.iter().filter(|&&m| !m).count();
        let expect: usize = b.switches.iter().map(|r| r.replacement.len() - 1).sum();
        assert_eq!(masked, expect);
    }
}
