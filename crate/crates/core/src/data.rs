//! Tokenized document pools and LM batch assembly from schedule segments.

use crate::codeswitch::{codeswitch_augment, CodeswitchMode, CodeswitchedBatch, SwitchTable};
use crate::corpus::schedule::{Segment, Source};
use crate::error::{Error, Result};
use crate::model::Packed;
use crate::rng::StreamRng;
use crate::tokenizer::{Span, Vocab, BOS_ID, PAD_ID};

/// A document as `<s>` followed by its tokens; `spans[0]` covers `<s>`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedDoc {
    pub ids: Vec<u32>,
    pub spans: Vec<Span>,
}

impl TokenizedDoc {
    pub fn new(vocab: &Vocab, text: &str) -> Self {
        let (body, spans) = vocab.encode_with_spans(text);
        let mut ids = Vec::with_capacity(body.len() + 1);
        ids.push(BOS_ID);
        ids.extend(body);
        let spans = std::iter::once(Span { start: 0, end: 1 })
            .chain(spans.into_iter().map(|s| Span { start: s.start + 1, end: s.end + 1 }))
            .collect();
        Self { ids, spans }
    }

    /// Token-wise clone of the document.
    pub fn cloned(&self, vocab: &Vocab) -> Result<Self> {
        Ok(Self { ids: vocab.clone_seq(&self.ids)?, spans: self.spans.clone() })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DocPool {
    pub docs: Vec<TokenizedDoc>,
}

impl DocPool {
    pub fn tokenize<S: AsRef<str>>(vocab: &Vocab, texts: &[S]) -> Self {
        Self { docs: texts.iter().map(|t| TokenizedDoc::new(vocab, t.as_ref())).collect() }
    }

    pub fn cloned(&self, vocab: &Vocab) -> Result<Self> {
        Ok(Self { docs: self.docs.iter().map(|d| d.cloned(vocab)).collect::<Result<_>>()? })
    }

    pub fn lens(&self) -> Vec<usize> {
        self.docs.iter().map(TokenizedDoc::len).collect()
    }

    pub fn tokens(&self) -> usize {
        self.docs.iter().map(TokenizedDoc::len).sum()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Document sources a schedule refers to.
pub struct Pools<'a> {
    pub base: &'a DocPool,
    pub clone: &'a DocPool,
    /// Knowledge documents per period.
    pub knowledge: &'a [DocPool],
}

impl Pools<'_> {
    fn doc(&self, seg: &Segment) -> Result<&TokenizedDoc> {
        let pool = match seg.source {
            Source::Base => self.base,
            Source::Clone => self.clone,
            Source::Knowledge => self
                .knowledge
                .get(seg.period)
                .ok_or_else(|| Error::data(format!("no knowledge documents for period {}", seg.period)))?,
        };
        let doc = pool
            .docs
            .get(seg.doc)
            .ok_or_else(|| Error::data(format!("{} document {} does not exist", seg.source.as_str(), seg.doc)))?;
        if seg.end > doc.len() {
            return Err(Error::data(format!("segment {}..{} exceeds document length {}", seg.start, seg.end, doc.len())));
        }
        Ok(doc)
    }
}

/// Codeswitching applied while assembling batches.
pub struct SwitchSpec<'a> {
    pub table: &'a SwitchTable,
    pub ratio: f64,
    pub mode: CodeswitchMode,
}

/// Packed LM batch with per-position targets and loss mask.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LmBatch {
    pub packed: Packed,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
    pub eligible: usize,
    pub switched: usize,
}

impl LmBatch {
    pub fn scored(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn push(&mut self, row: CodeswitchedBatch) {
        if row.is_empty() {
            return;
        }
        self.packed.push(&row.input);
        self.targets.extend(&row.targets);
        self.mask.extend(&row.mask);
        self.eligible += row.eligible;
        self.switched += row.switches.len();
    }
}

/// Word-aligned chunks of `[a, b)` holding at most `max_len` tokens. Words
/// longer than `max_len` are split; words cut by the range are clipped.
pub fn chunk_rows(spans: &[Span], a: usize, b: usize, max_len: usize) -> Vec<(usize, usize, Vec<Span>)> {
    let mut rows = Vec::new();
    let mut cur: Vec<Span> = Vec::new();
    let mut cur_start = a;
    let lo = spans.partition_point(|s| s.end <= a);
    for s in &spans[lo..] {
        if s.start >= b {
            break;
        }
        let mut w = Span { start: s.start.max(a), end: s.end.min(b) };
        while w.start < w.end {
            let used = cur.last().map_or(0, |l| l.end - cur_start);
            if used + w.len() <= max_len {
                cur.push(w);
                break;
            }
            if used > 0 {
                rows.push((cur_start, cur.last().expect("non-empty").end, std::mem::take(&mut cur)));
                cur_start = w.start;
                continue;
            }
            let cut = Span { start: w.start, end: w.start + max_len };
            rows.push((cut.start, cut.end, vec![cut]));
            w.start = cut.end;
            cur_start = w.start;
        }
    }
    if let Some(l) = cur.last() {
        rows.push((cur_start, l.end, cur));
    }
    rows
}

/// Assemble one step's batch. Each segment is cut into rows of at most
/// `context + 1` tokens; knowledge rows are never switched.
pub fn assemble_batch(
    segments: &[Segment],
    pools: &Pools<'_>,
    context: usize,
    switch: Option<&SwitchSpec<'_>>,
    rng: &mut StreamRng,
) -> Result<LmBatch> {
    let mut batch = LmBatch::default();
    let empty = SwitchTable::default();
    for seg in segments {
        let doc = pools.doc(seg)?;
        for (a, b, spans) in chunk_rows(&doc.spans, seg.start, seg.end, context + 1) {
            let local: Vec<Span> = spans.iter().map(|s| Span { start: s.start - a, end: s.end - a }).collect();
            let toks = &doc.ids[a..b];
            let (table, ratio, mode) = match switch {
                Some(sw) if seg.source != Source::Knowledge => (sw.table, sw.ratio, sw.mode),
                _ => (&empty, 0.0, CodeswitchMode::Off),
            };
            let mut row = codeswitch_augment(toks, &local, table, ratio, mode, PAD_ID, rng)?;
            row.truncate(context);
            batch.push(row);
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::schedule::Segment;
    use crate::rng::stream;
    use crate::tokenizer::TokenizerConfig;

    fn spans(lens: &[usize]) -> Vec<Span> {
        let mut at = 0;
        lens.iter()
            .map(|&l| {
                let s = Span { start: at, end: at + l };
                at += l;
                s
            })
            .collect()
    }

    #[test]
    fn rows_respect_word_boundaries_and_length() {
        let sp = spans(&[1, 2, 3, 1, 2]);
        let rows = chunk_rows(&sp, 0, 9, 4);
        let bounds: Vec<(usize, usize)> = rows.iter().map(|r| (r.0, r.1)).collect();
        assert_eq!(bounds, [(0, 3), (3, 7), (7, 9)]);
        let rows = chunk_rows(&sp, 2, 8, 4);
        let bounds: Vec<(usize, usize)> = rows.iter().map(|r| (r.0, r.1)).collect();
        assert_eq!(bounds, [(2, 6), (6, 8)]);
    }

    #[test]
    fn long_words_are_split() {
        let sp = spans(&[7]);
        let rows = chunk_rows(&sp, 0, 7, 3);
        let bounds: Vec<(usize, usize)> = rows.iter().map(|r| (r.0, r.1)).collect();
        assert_eq!(bounds, [(0, 3), (3, 6), (6, 7)]);
    }

    #[test]
    fn batch_covers_segment_tokens() {
        let v = crate::tokenizer::Vocab::train(["a b c d e f g h"], &TokenizerConfig::default()).unwrap();
        let pool = DocPool::tokenize(&v, &["a b c d e f g h", "h g f"]);
        let empty = DocPool::default();
        let pools = Pools { base: &pool, clone: &empty, knowledge: &[] };
        let segs = [
            Segment { step: 0, period: 0, source: Source::Base, doc: 0, start: 0, end: 9 },
            Segment { step: 0, period: 0, source: Source::Base, doc: 1, start: 1, end: 4 },
        ];
        let mut rng = stream(0, "b", 0);
        let b = assemble_batch(&segs, &pools, 4, None, &mut rng).unwrap();
        // 9 tokens -> rows 5 + 4 -> 4 + 3 positions; 3 tokens -> 2 positions.
        assert_eq!(b.targets.len(), 9);
        assert!(b.packed.seqs.iter().all(|&(_, l)| l <= 4));
        assert_eq!(b.scored(), 9);
        let bad = [Segment { step: 0, period: 0, source: Source::Base, doc: 5, start: 0, end: 1 }];
        assert_eq!(assemble_batch(&bad, &pools, 4, None, &mut rng).unwrap_err().exit_code(), 3);
    }
}
