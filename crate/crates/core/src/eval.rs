//! Perplexity, statement likelihood, CLKA probing, embedding alignment,
//! generation leak ratio, and the zero-shot cross-lingual transfer task.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::align::AlignmentTable;
use crate::corpus::knowledge::{Language, Probe};
use crate::corpus::natural::{PairExample, PairTask};
use crate::data::{chunk_rows, DocPool};
use crate::error::{Error, Result};
use crate::model::{cosine, log_softmax_rows, sample_generate, Graph, Packed, SampleOptions, Transformer};
use crate::rng::stream;
use crate::tokenizer::{Vocab, BOS_ID};

/// Tokens packed into one evaluation forward pass.
const EVAL_CHUNK: usize = 4096;

/// Next-token log-probabilities for each sequence (`len - 1` per sequence).
pub fn sequence_logprobs(model: &Transformer<f32>, seqs: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); seqs.len()];
    let mut start = 0;
    while start < seqs.len() {
        let mut end = start;
        let mut tokens = 0;
        while end < seqs.len() && (end == start || tokens + seqs[end].len() <= EVAL_CHUNK) {
            tokens += seqs[end].len();
            end += 1;
        }
        let inputs: Vec<&[u32]> = seqs[start..end].iter().map(|s| &s[..s.len().saturating_sub(1)]).collect();
        let nonempty: Vec<usize> = (0..inputs.len()).filter(|&i| !inputs[i].is_empty()).collect();
        if !nonempty.is_empty() {
            let packed = Packed::from_seqs(&nonempty.iter().map(|&i| inputs[i]).collect::<Vec<_>>());
            let mut g = Graph::new(&model.params);
            let fwd = model.forward(&mut g, &packed, true)?;
            let lp = log_softmax_rows(g.value(fwd.logits.expect("logits requested")));
            for (k, &i) in nonempty.iter().enumerate() {
                let (row0, len) = packed.seqs[k];
                let seq = seqs[start + i];
                out[start + i] = (0..len).map(|p| lp.get(row0 + p, seq[p + 1] as usize) as f64).collect();
            }
        }
        start = end;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordClass {
    Seen,
    Unseen,
    Outside,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordFilter {
    All,
    Seen,
    Unseen,
    /// Seen or unseen: every word of the alignment table.
    InTable,
}

impl WordFilter {
    pub fn accepts(self, c: WordClass) -> bool {
        match self {
            WordFilter::All => true,
            WordFilter::Seen => c == WordClass::Seen,
            WordFilter::Unseen => c == WordClass::Unseen,
            WordFilter::InTable => c != WordClass::Outside,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WordFilter::All => "all",
            WordFilter::Seen => "seen",
            WordFilter::Unseen => "unseen",
            WordFilter::InTable => "in_table",
        }
    }
}

/// Classifies words, by their base-script token sequence, as seen (used
/// for alignment), unseen (in the table but held out), or outside.
#[derive(Clone, Debug, Default)]
pub struct WordClassifier {
    classes: HashMap<Vec<u32>, WordClass>,
}

impl WordClassifier {
    pub fn new(vocab: &Vocab, table: &AlignmentTable, seen: &BTreeSet<String>) -> Self {
        let classes = table
            .words()
            .map(|w| (vocab.encode_word(w), if seen.contains(w) { WordClass::Seen } else { WordClass::Unseen }))
            .collect();
        Self { classes }
    }

    pub fn classify(&self, vocab: &Vocab, word: &[u32]) -> WordClass {
        let base = vocab.unclone_seq(word);
        self.classes.get(&base).copied().unwrap_or(WordClass::Outside)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub ppl: f64,
    pub nll_sum: f64,
    pub count: usize,
}

/// `exp` of the mean next-token NLL over the scored positions of `pool`.
/// A position is scored when the word containing its target passes the
/// filter.
pub fn perplexity(
    model: &Transformer<f32>,
    vocab: &Vocab,
    pool: &DocPool,
    filter: WordFilter,
    classes: Option<&WordClassifier>,
) -> Result<Perplexity> {
    if filter != WordFilter::All && classes.is_none() {
        return Err(Error::usage("word-class filters need an alignment table"));
    }
    let ctx = model.config.context;
    let mut rows: Vec<&[u32]> = Vec::new();
    let mut row_classes: Vec<Vec<WordClass>> = Vec::new();
    for doc in &pool.docs {
        let mut cls = vec![WordClass::Outside; doc.len()];
        if let Some(c) = classes {
            for s in &doc.spans {
                let k = c.classify(vocab, &doc.ids[s.start..s.end]);
                cls[s.start..s.end].iter_mut().for_each(|x| *x = k);
            }
        }
        for (a, b, _) in chunk_rows(&doc.spans, 0, doc.len(), ctx + 1) {
            if b - a >= 2 {
                rows.push(&doc.ids[a..b]);
                row_classes.push(cls[a + 1..b].to_vec());
            }
        }
    }
    let lps = sequence_logprobs(model, &rows)?;
    let mut nll_sum = 0.0;
    let mut count = 0usize;
    for (lp, cls) in lps.iter().zip(&row_classes) {
        for (&l, &c) in lp.iter().zip(cls) {
            if filter.accepts(c) {
                nll_sum -= l;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::data(format!("no positions pass the {} filter", filter.as_str())));
    }
    Ok(Perplexity { ppl: (nll_sum / count as f64).exp(), nll_sum, count })
}

/// `<s>` followed by the statement's tokens, checked against the context.
pub fn statement_ids(model: &Transformer<f32>, vocab: &Vocab, text: &str) -> Result<Vec<u32>> {
    let mut ids = vec![BOS_ID];
    ids.extend(vocab.encode(text));
    if ids.len() > model.config.context {
        return Err(Error::data(format!(
            "statement of {} tokens exceeds context {}: {text:?}",
            ids.len(),
            model.config.context
        )));
    }
    Ok(ids)
}

/// Total (or per-token mean) log-probability of each statement given `<s>`.
pub fn statement_logliks(model: &Transformer<f32>, vocab: &Vocab, texts: &[String], normalize: bool) -> Result<Vec<f64>> {
    let ids = texts.iter().map(|t| statement_ids(model, vocab, t)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[u32]> = ids.iter().map(Vec::as_slice).collect();
    Ok(sequence_logprobs(model, &refs)?
        .into_iter()
        .map(|lp| {
            let s: f64 = lp.iter().sum();
            if normalize && !lp.is_empty() {
                s / lp.len() as f64
            } else {
                s
            }
        })
        .collect())
}

pub fn statement_loglik(model: &Transformer<f32>, vocab: &Vocab, text: &str, normalize: bool) -> Result<f64> {
    Ok(statement_logliks(model, vocab, &[text.to_string()], normalize)?[0])
}

/// CLKA decision rule: the first score must strictly exceed all others.
pub fn clka_correct(scores: &[f64]) -> bool {
    scores.len() > 1 && scores[1..].iter().all(|&d| scores[0] > d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClkaResult {
    pub accuracy: f64,
    pub n: usize,
    pub per_level: BTreeMap<usize, f64>,
}

/// Accuracy of `scorer`, which maps a probe's candidate statements (correct
/// first) to scores.
pub fn clka_with<F>(probes: &[Probe], mut scorer: F) -> Result<ClkaResult>
where
    F: FnMut(&Probe) -> Result<Vec<f64>>,
{
    if probes.is_empty() {
        return Err(Error::data("no probe items"));
    }
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut hits = 0;
    for p in probes {
        if p.distractors.len() != 3 {
            return Err(Error::data(format!("probe for {:?} has {} distractors, need 3", p.triplet.subject, p.distractors.len())));
        }
        let ok = clka_correct(&scorer(p)?);
        hits += ok as usize;
        let e = per.entry(p.triplet.frequency).or_default();
        e.0 += ok as usize;
        e.1 += 1;
    }
    Ok(ClkaResult {
        accuracy: hits as f64 / probes.len() as f64,
        n: probes.len(),
        per_level: per.into_iter().map(|(l, (h, n))| (l, h as f64 / n as f64)).collect(),
    })
}

pub fn clka_probe(
    model: &Transformer<f32>,
    vocab: &Vocab,
    probes: &[Probe],
    language: Language,
    normalize: bool,
) -> Result<ClkaResult> {
    let marker = vocab.marker().unwrap_or("");
    if language == Language::Clone && marker.is_empty() {
        return Err(Error::usage("clone-language probing needs a vocabulary with clone tokens"));
    }
    let all: Vec<String> = probes.iter().flat_map(|p| p.statements(language, marker)).collect();
    let scores = statement_logliks(model, vocab, &all, normalize)?;
    let mut at = 0;
    clka_with(probes, |p| {
        let n = 1 + p.distractors.len();
        let s = scores[at..at + n].to_vec();
        at += n;
        Ok(s)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub mean: f64,
    pub seen: Option<f64>,
    pub unseen: Option<f64>,
    pub pairs: usize,
}

fn mean_embedding(emb: &crate::model::Tensor<f32>, ids: &[u32]) -> Vec<f64> {
    let mut v = vec![0.0f64; emb.cols()];
    for &t in ids {
        for (a, &x) in v.iter_mut().zip(emb.row(t as usize)) {
            *a += x as f64;
        }
    }
    let n = ids.len() as f64;
    v.iter_mut().for_each(|a| *a /= n);
    v
}

/// Mean input-embedding cosine over every (word, translation) pair of the
/// table; multi-token sides are mean-pooled.
pub fn embedding_alignment_score(
    model: &Transformer<f32>,
    vocab: &Vocab,
    table: &AlignmentTable,
    seen: &BTreeSet<String>,
) -> Result<AlignmentScore> {
    if table.is_empty() {
        return Err(Error::data("alignment table is empty"));
    }
    let emb = model.tok_emb();
    let (mut s_sum, mut s_n, mut u_sum, mut u_n) = (0.0, 0usize, 0.0, 0usize);
    for w in table.words() {
        let a = mean_embedding(emb, &vocab.encode_word(w));
        for tr in table.translations(w) {
            let ids: Vec<u32> = tr.split_whitespace().flat_map(|x| vocab.encode_word(x)).collect();
            let b = mean_embedding(emb, &ids);
            let c = cosine(&a, &b).ok_or_else(|| Error::numerical(format!("zero-norm embedding for {w:?} or {tr:?}")))?;
            if seen.contains(w) {
                s_sum += c;
                s_n += 1;
            } else {
                u_sum += c;
                u_n += 1;
            }
        }
    }
    let n = s_n + u_n;
    Ok(AlignmentScore {
        mean: (s_sum + u_sum) / n as f64,
        seen: (s_n > 0).then(|| s_sum / s_n as f64),
        unseen: (u_n > 0).then(|| u_sum / u_n as f64),
        pairs: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakResult {
    pub ratio: f64,
    pub leaked: usize,
    pub samples: usize,
}

/// Fraction of sampled continuations of base-language prompts that contain
/// at least one clone-script token.
pub fn leak_ratio(
    model: &Transformer<f32>,
    vocab: &Vocab,
    prompts: &[Vec<u32>],
    samples: usize,
    gen_len: usize,
    temperature: f64,
    seed: u64,
) -> Result<LeakResult> {
    if prompts.is_empty() || samples == 0 {
        return Err(Error::usage("leak ratio needs prompts and a positive sample count"));
    }
    if let Some(bad) = prompts.iter().flatten().find(|&&t| vocab.is_clone(t)) {
        return Err(Error::data(format!("prompt contains clone token {:?}", vocab.token(*bad).unwrap_or("?"))));
    }
    let opts = SampleOptions { temperature, banned: None };
    let mut leaked = 0;
    for i in 0..samples {
        let mut rng = stream(seed, "leak", i as u64);
        let out = sample_generate(model, &prompts[i % prompts.len()], gen_len, &opts, &mut rng)?;
        leaked += out.iter().any(|&t| vocab.is_clone(t)) as usize;
    }
    Ok(LeakResult { ratio: leaked as f64 / samples as f64, leaked, samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZsCltConfig {
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ZsCltConfig {
    fn default() -> Self {
        Self { train_pairs: 10_000, test_pairs: 2_000, epochs: 300, lr: 0.05, l2: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZsCltResult {
    pub base_accuracy: f64,
    pub clone_accuracy: f64,
}

/// Mean of the final-layer (post layer-norm) states over each sentence's
/// tokens, excluding `<s>`.
pub fn sentence_features(model: &Transformer<f32>, vocab: &Vocab, sentences: &[String]) -> Result<Vec<Vec<f64>>> {
    let ids = sentences.iter().map(|s| statement_ids(model, vocab, s)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(ids.len());
    let mut start = 0;
    while start < ids.len() {
        let mut end = start;
        let mut tokens = 0;
        while end < ids.len() && (end == start || tokens + ids[end].len() <= EVAL_CHUNK) {
            tokens += ids[end].len();
            end += 1;
        }
        let packed = Packed::from_seqs(&ids[start..end]);
        let mut g = Graph::new(&model.params);
        let fwd = model.forward(&mut g, &packed, false)?;
        let h = g.value(fwd.last);
        for &(r0, len) in &packed.seqs {
            let mut v = vec![0.0f64; h.cols()];
            for r in r0 + 1..r0 + len {
                for (a, &x) in v.iter_mut().zip(h.row(r)) {
                    *a += x as f64;
                }
            }
            let n = (len - 1).max(1) as f64;
            v.iter_mut().for_each(|a| *a /= n);
            out.push(v);
        }
        start = end;
    }
    Ok(out)
}

fn pair_features(model: &Transformer<f32>, vocab: &Vocab, ex: &[PairExample], clone: bool) -> Result<Vec<Vec<f64>>> {
    let marker = vocab.marker().unwrap_or("");
    let render = |s: &String| if clone { crate::corpus::clone_words(s, marker) } else { s.clone() };
    let firsts: Vec<String> = ex.iter().map(|e| render(&e.first)).collect();
    let seconds: Vec<String> = ex.iter().map(|e| render(&e.second)).collect();
    let a = sentence_features(model, vocab, &firsts)?;
    let b = sentence_features(model, vocab, &seconds)?;
    Ok(a.into_iter()
        .zip(b)
        .map(|(p, q)| {
            let prod: Vec<f64> = p.iter().zip(&q).map(|(x, y)| x * y).collect();
            let mut f = p;
            f.extend(q);
            f.extend(prod);
            f
        })
        .collect())
}

/// Binary logistic regression trained by full-batch Adam on standardized
/// features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<f64>,
    b: f64,
}

impl LinearHead {
    pub fn fit(x: &[Vec<f64>], y: &[bool], cfg: &ZsCltConfig) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::data("classifier needs one label per example"));
        }
        if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
            return Err(Error::data("classifier training data has a single class"));
        }
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut scale = vec![0.0; d];
        for r in x {
            scale.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-12 { 1.0 / s.sqrt() } else { 0.0 });
        let z: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect()).collect();
        let mut head = Self { mean, scale, w: vec![0.0; d], b: 0.0 };
        let (mut mw, mut vw, mut mb, mut vb) = (vec![0.0; d], vec![0.0; d], 0.0, 0.0);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        for t in 1..=cfg.epochs {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (r, &label) in z.iter().zip(y) {
                let p = sigmoid(dot(&head.w, r) + head.b);
                let e = p - if label { 1.0 } else { 0.0 };
                gw.iter_mut().zip(r).for_each(|(g, v)| *g += e * v / n);
                gb += e / n;
            }
            gw.iter_mut().zip(&head.w).for_each(|(g, w)| *g += cfg.l2 * w);
            let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
            for k in 0..d {
                mw[k] = b1 * mw[k] + (1.0 - b1) * gw[k];
                vw[k] = b2 * vw[k] + (1.0 - b2) * gw[k] * gw[k];
                head.w[k] -= cfg.lr * (mw[k] / c1) / ((vw[k] / c2).sqrt() + eps);
            }
            mb = b1 * mb + (1.0 - b1) * gb;
            vb = b2 * vb + (1.0 - b2) * gb * gb;
            head.b -= cfg.lr * (mb / c1) / ((vb / c2).sqrt() + eps);
        }
        Ok(head)
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        let z: f64 = x.iter().zip(&self.mean).zip(&self.scale).zip(&self.w).map(|(((v, m), s), w)| (v - m) * s * w).sum();
        z + self.b > 0.0
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[bool]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / y.len().max(1) as f64
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fit a head on frozen base-language features; report base and clone test
/// accuracy. The backbone is only read.
pub fn zsclt_train_eval(model: &Transformer<f32>, vocab: &Vocab, task: &PairTask, cfg: &ZsCltConfig) -> Result<ZsCltResult> {
    if vocab.marker().is_none() {
        return Err(Error::usage("zero-shot transfer needs a vocabulary with clone tokens"));
    }
    let labels = |ex: &[PairExample]| ex.iter().map(|e| e.same).collect::<Vec<_>>();
    let xtr = pair_features(model, vocab, &task.train, false)?;
    let head = LinearHead::fit(&xtr, &labels(&task.train), cfg)?;
    let ytest = labels(&task.test);
    let xb = pair_features(model, vocab, &task.test, false)?;
    let xc = pair_features(model, vocab, &task.test, true)?;
    Ok(ZsCltResult { base_accuracy: head.accuracy(&xb, &ytest), clone_accuracy: head.accuracy(&xc, &ytest) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::knowledge::Triplet;
    use crate::model::ModelConfig;
    use crate::tokenizer::TokenizerConfig;

    fn vocab() -> Vocab {
        Vocab::train(["a b c d e f g ."], &TokenizerConfig::default()).unwrap().with_clones("§").unwrap()
    }

    fn model(v: &Vocab, std: f64) -> Transformer<f32> {
        Transformer::new(ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            context: 16,
            vocab_size: v.len(),
            init_std: std,
            seed: 2,
            ..Default::default()
        })
        .unwrap()
    }

    fn uniform(v: &Vocab) -> Transformer<f32> {
        let mut m = model(v, 0.02);
        let id = m.layout.out_emb;
        m.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        m
    }

    #[test]
    fn uniform_model_has_vocab_size_perplexity() {
        let v = vocab();
        let m = uniform(&v);
        let pool = DocPool::tokenize(&v, &["a b c", "d e f g ."]);
        let p = perplexity(&m, &v, &pool, WordFilter::All, None).unwrap();
        assert!((p.ppl - v.len() as f64).abs() < 1e-3 * v.len() as f64);
        assert_eq!(p.count, 3 + 5);
    }

    #[test]
    fn perplexity_matches_brute_force_nll() {
        let v = vocab();
        let m = model(&v, 0.3);
        let pool = DocPool::tokenize(&v, &["a b c d e f g . a b"]);
        let ids = &pool.docs[0].ids;
        let logits = m.logits(&ids[..ids.len() - 1]).unwrap();
        let mut nll = 0.0f64;
        for p in 0..ids.len() - 1 {
            let row = logits.row(p);
            let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = mx + row.iter().map(|&x| (x as f64 - mx).exp()).sum::<f64>().ln();
            nll += lse - row[ids[p + 1] as usize] as f64;
        }
        let want = (nll / (ids.len() - 1) as f64).exp();
        let got = perplexity(&m, &v, &pool, WordFilter::All, None).unwrap().ppl;
        assert!((got - want).abs() < 1e-4 * want, "{got} vs {want}");
    }

    #[test]
    fn seen_and_unseen_partition_in_table_positions() {
        let v = vocab();
        let m = model(&v, 0.3);
        let table = AlignmentTable::from_clone_map(&v).unwrap();
        let seen = table.select_beta(0.5).unwrap();
        let cls = WordClassifier::new(&v, &table, &seen);
        let pool = DocPool::tokenize(&v, &["a b c d§ e§ f g .", "g f§ e d c b a"]);
        let s = perplexity(&m, &v, &pool, WordFilter::Seen, Some(&cls)).unwrap();
        let u = perplexity(&m, &v, &pool, WordFilter::Unseen, Some(&cls)).unwrap();
        let t = perplexity(&m, &v, &pool, WordFilter::InTable, Some(&cls)).unwrap();
        assert_eq!(s.count + u.count, t.count);
        assert!((s.nll_sum + u.nll_sum - t.nll_sum).abs() < 1e-9);
        assert!(perplexity(&m, &v, &pool, WordFilter::Seen, None).is_err());
    }

    #[test]
    fn statement_loglik_of_half_probability_token() {
        let v = Vocab::train(["x"], &TokenizerConfig::default()).unwrap();
        let mut m = Transformer::<f32>::new(ModelConfig {
            n_layers: 1,
            d_model: 4,
            n_heads: 1,
            context: 4,
            vocab_size: v.len(),
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        // Final state is the all-ones vector, so each logit is its row sum:
        // 0 for `x` and `<pad>`, -1000 elsewhere.
        let (lnf_g, lnf_b, out) = (m.layout.lnf_g, m.layout.lnf_b, m.layout.out_emb);
        m.params.get_mut(lnf_g).data_mut().iter_mut().for_each(|g| *g = 0.0);
        m.params.get_mut(lnf_b).data_mut().iter_mut().for_each(|b| *b = 1.0);
        let x = v.id("x").unwrap() as usize;
        for t in 0..v.len() {
            let val = if t == x || t == 0 { 0.0 } else { -250.0 };
            m.params.get_mut(out).row_mut(t).iter_mut().for_each(|w| *w = val);
        }
        let ll = statement_loglik(&m, &v, "x", false).unwrap();
        assert!((ll + std::f64::consts::LN_2).abs() < 1e-6, "{ll}");
        let longer = statement_loglik(&m, &v, "x x", false).unwrap();
        assert!(longer <= ll);
    }

    #[test]
    fn clka_rule_treats_ties_as_wrong() {
        assert!(clka_correct(&[-1.0, -2.0, -3.0, -1.5]));
        assert!(!clka_correct(&[-1.0, -1.0, -3.0, -4.0]));
        assert!(!clka_correct(&[-1.0; 4]));
        let probe = Probe {
            triplet: Triplet { period: 0, subject: "zab".into(), relation: 0, object: "a".into(), frequency: 4 },
            distractors: vec!["b".into(), "c".into(), "d".into()],
        };
        let r = clka_with(&[probe.clone(), probe], |_| Ok(vec![0.0; 4])).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.per_level[&4], 0.0);
    }

    #[test]
    fn aligned_embeddings_score_one_and_leak_is_zero_when_clones_are_banned() {
        let v = vocab();
        let mut m = model(&v, 0.3);
        crate::prealign::perfect_align_init(&mut m, &v).unwrap();
        let table = AlignmentTable::from_clone_map(&v).unwrap();
        let s = embedding_alignment_score(&m, &v, &table, &table.select_beta(1.0).unwrap()).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-9);
        let out_id = m.layout.out_emb;
        for t in 0..v.len() as u32 {
            if v.is_clone(t) {
                m.params.get_mut(out_id).row_mut(t as usize).iter_mut().for_each(|w| *w = -1e4);
            }
        }
        let lnf_b = m.layout.lnf_b;
        m.params.get_mut(lnf_b).data_mut().iter_mut().for_each(|b| *b = 1.0);
        let lnf_g = m.layout.lnf_g;
        m.params.get_mut(lnf_g).data_mut().iter_mut().for_each(|g| *g = 0.0);
        let r = leak_ratio(&m, &v, &[vec![BOS_ID, 3]], 50, 8, 1.0, 0).unwrap();
        assert_eq!(r.ratio, 0.0);
        assert!(leak_ratio(&m, &v, &[v.encode("a§")], 5, 2, 1.0, 0).is_err());
    }

    #[test]
    fn head_learns_a_separable_problem() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let h = LinearHead::fit(&x, &y, &ZsCltConfig::default()).unwrap();
        assert_eq!(h.accuracy(&x, &y), 1.0);
        assert!(LinearHead::fit(&x, &[true; 40], &ZsCltConfig::default()).is_err());
    }
}
