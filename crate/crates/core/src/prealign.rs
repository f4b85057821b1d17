//! Stage 1: contrastive alignment of translation pairs at every layer,
//! trained jointly with an auxiliary LM loss; and the perfect-alignment
//! initialization used as an upper bound.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::align::{sample_pair_batch, AlignmentTable, Pair};
use crate::corpus::schedule::Schedule;
use crate::data::{assemble_batch, LmBatch, Pools};
use crate::error::{Error, Result};
use crate::eval::embedding_alignment_score;
use crate::metrics::{MetricRecord, MetricsWriter};
use crate::model::{clip_grad_norm, loss_lm, AdamConfig, CosineSchedule, Float, Graph, ModelState, Transformer, Var};
use crate::rng::stream;
use crate::tokenizer::{Vocab, BOS_ID, UNK_ID};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreAlignConfig {
    pub temperature: f64,
    /// Translation pairs per alignment batch.
    pub pair_batch: usize,
    /// Share of the pretraining token budget spent on the auxiliary LM loss.
    pub lm_budget_fraction: f64,
    pub steps: u64,
    /// Keep the anchor's own similarity in the denominator.
    pub include_self: bool,
    pub lr: f64,
    pub min_lr: f64,
    pub eval_interval: u64,
    pub log_interval: u64,
}

impl Default for PreAlignConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            pair_batch: 64,
            lm_budget_fraction: 0.05,
            steps: 200,
            include_self: true,
            lr: 1e-3,
            min_lr: 1e-4,
            eval_interval: 50,
            log_interval: 10,
        }
    }
}

impl PreAlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::usage("prealign.temperature must be positive"));
        }
        if !(self.lm_budget_fraction > 0.0 && self.lm_budget_fraction < 1.0) {
            return Err(Error::usage("prealign.lm_budget_fraction must lie in (0, 1)"));
        }
        if self.pair_batch == 0 || self.steps == 0 {
            return Err(Error::usage("prealign.pair_batch and prealign.steps must be positive"));
        }
        Ok(())
    }
}

/// Contrastive loss over one layer's word representations.
///
/// For each ordered pair `(i, j)` the row of item `j` is scored against all
/// items by `cos(h_j, h_k) / τ` and the target is `i`. Both orderings of
/// every pair are used and the result is averaged over them. Without
/// `include_self` the anchor's own similarity is dropped from the
/// denominator.
pub fn contrastive_layer_loss<T: Float>(
    g: &mut Graph<'_, T>,
    reps: Var,
    pairs: &[(usize, usize)],
    tau: f64,
    include_self: bool,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::data("contrastive loss needs at least one pair"));
    }
    let n = g.value(reps).rows();
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
        return Err(Error::data(format!("invalid pair ({a}, {b}) for a batch of {n}")));
    }
    let z = g.normalize_rows(reps)?;
    let sim = g.matmul(z, z, true);
    let mut logits = g.scale(sim, T::from_f64_lossy(1.0 / tau));
    if !include_self {
        logits = g.mask_diagonal(logits);
    }
    let mut rows = Vec::with_capacity(2 * pairs.len());
    let mut targets = Vec::with_capacity(2 * pairs.len());
    for &(i, j) in pairs {
        rows.push(j);
        targets.push(i);
        rows.push(i);
        targets.push(j);
    }
    let picked = g.gather(logits, &rows);
    let w = T::from_f64_lossy(1.0 / rows.len() as f64);
    Ok(g.cross_entropy(picked, &targets, &vec![w; rows.len()]))
}

/// Tokenized alignment batch: items `2k` and `2k + 1` form pair `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub items: Vec<Vec<u32>>,
    pub pairs: Vec<(usize, usize)>,
}

impl PairBatch {
    pub fn from_pairs(vocab: &Vocab, pairs: &[Pair]) -> Result<Self> {
        let enc = |text: &str| -> Result<Vec<u32>> {
            let ids: Vec<u32> = text.split_whitespace().flat_map(|w| vocab.encode_word(w)).collect();
            if ids.is_empty() || ids.contains(&UNK_ID) {
                return Err(Error::data(format!("{text:?} is not tokenizable")));
            }
            Ok(ids)
        };
        let mut items = Vec::with_capacity(2 * pairs.len());
        let mut idx = Vec::with_capacity(pairs.len());
        for p in pairs {
            idx.push((items.len(), items.len() + 1));
            items.push(enc(&p.source)?);
            items.push(enc(&p.translation)?);
        }
        Ok(Self { items, pairs: idx })
    }
}

/// Sum of the contrastive loss over layers `0..=L+1`; also returns the
/// per-layer terms.
pub fn align_loss_all_layers<T: Float>(
    model: &Transformer<T>,
    g: &mut Graph<'_, T>,
    batch: &PairBatch,
    tau: f64,
    include_self: bool,
) -> Result<(Var, Vec<Var>)> {
    let reps = model.encode_words(g, &batch.items, BOS_ID)?;
    let terms = reps
        .into_iter()
        .map(|r| contrastive_layer_loss(g, r, &batch.pairs, tau, include_self))
        .collect::<Result<Vec<_>>>()?;
    Ok((g.sum(&terms), terms))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub align: f64,
    pub lm: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// One optimizer step on `L_align + L_LM`.
pub fn joint_step(
    state: &mut ModelState,
    pairs: &PairBatch,
    lm: &LmBatch,
    cfg: &PreAlignConfig,
    lr: f64,
    adam: &AdamConfig,
) -> Result<StepLosses> {
    let mut grads;
    let losses;
    {
        let model = &state.model;
        let mut g = Graph::new(&model.params);
        let (align, _) = align_loss_all_layers(model, &mut g, pairs, cfg.temperature, cfg.include_self)?;
        let fwd = model.forward(&mut g, &lm.packed, true)?;
        let lm_loss = loss_lm(&mut g, fwd.logits.expect("logits requested"), &lm.targets, &lm.mask)?;
        let total = g.sum(&[align, lm_loss]);
        let (a, l, t) = (g.scalar(align) as f64, g.scalar(lm_loss) as f64, g.scalar(total) as f64);
        if !t.is_finite() {
            return Err(Error::numerical(format!("stage-1 loss is not finite at step {}", state.step)));
        }
        grads = g.backward(total);
        losses = (a, l, t);
    }
    let grad_norm = clip_grad_norm(&mut grads, adam.grad_clip);
    state.optim.update(&mut state.model.params, &grads, lr, adam)?;
    state.step += 1;
    Ok(StepLosses { align: losses.0, lm: losses.1, total: losses.2, grad_norm })
}

/// Inputs of a stage-1 run.
pub struct PreAlignData<'a> {
    pub vocab: &'a Vocab,
    pub table: &'a AlignmentTable,
    pub seen: &'a BTreeSet<String>,
    /// One LM step per alignment step.
    pub lm_schedule: &'a Schedule,
    pub pools: Pools<'a>,
}

/// Run stage 1 from `state`, logging `align_loss`, `lm_loss`, and
/// `aligned_cosine` records.
pub fn run_prealign(
    state: &mut ModelState,
    data: &PreAlignData<'_>,
    cfg: &PreAlignConfig,
    adam: &AdamConfig,
    metrics: &mut MetricsWriter,
) -> Result<()> {
    cfg.validate()?;
    if data.seen.is_empty() {
        return Err(Error::data("alignment seen set is empty"));
    }
    if data.lm_schedule.total_steps() != cfg.steps {
        return Err(Error::usage(format!(
            "stage-1 LM schedule has {} steps, configuration asks for {}",
            data.lm_schedule.total_steps(),
            cfg.steps
        )));
    }
    let seen: Vec<String> = data.seen.iter().cloned().collect();
    let sched = CosineSchedule::new(cfg.lr, cfg.min_lr, cfg.steps);
    let log_cosine = |state: &ModelState, metrics: &mut MetricsWriter, step: u64| -> Result<()> {
        let s = embedding_alignment_score(&state.model, data.vocab, data.table, data.seen)?;
        metrics.write(&MetricRecord::new(step, "aligned_cosine", "all", s.mean))?;
        if let Some(v) = s.seen {
            metrics.write(&MetricRecord::new(step, "aligned_cosine", "seen", v))?;
        }
        if let Some(v) = s.unseen {
            metrics.write(&MetricRecord::new(step, "aligned_cosine", "unseen", v))?;
        }
        Ok(())
    };
    let first = state.step;
    if first == 0 {
        log_cosine(state, metrics, 0)?;
    }
    for step in first..cfg.steps {
        let mut prng = stream(state.seed, "prealign-pairs", step);
        let pairs = sample_pair_batch(data.table, &seen, cfg.pair_batch, &mut prng)?;
        let pb = PairBatch::from_pairs(data.vocab, &pairs)?;
        let mut lrng = stream(state.seed, "prealign-lm", step);
        let lm = assemble_batch(
            data.lm_schedule.step(step),
            &data.pools,
            state.model.config.context,
            None,
            &mut lrng,
        )?;
        let l = joint_step(state, &pb, &lm, cfg, sched.lr(step), adam)?;
        let done = step + 1;
        if done % cfg.log_interval.max(1) == 0 || done == cfg.steps {
            metrics.write(&MetricRecord::new(done, "align_loss", "stage1", l.align))?;
            metrics.write(&MetricRecord::new(done, "lm_loss", "stage1", l.lm))?;
        }
        if done % cfg.eval_interval.max(1) == 0 || done == cfg.steps {
            log_cosine(state, metrics, done)?;
        }
    }
    metrics.flush()
}

/// Copy every base token's input and output embedding rows onto its clone.
pub fn perfect_align_init<T: Float>(model: &mut Transformer<T>, vocab: &Vocab) -> Result<()> {
    if vocab.marker().is_none() {
        return Err(Error::usage("perfect alignment needs a vocabulary with clone tokens"));
    }
    if model.vocab_size() != vocab.len() {
        return Err(Error::data(format!(
            "model vocabulary {} does not match tokenizer vocabulary {}",
            model.vocab_size(),
            vocab.len()
        )));
    }
    let (tok, out) = (model.layout.tok_emb, model.layout.out_emb);
    for id in 0..vocab.len() as u32 {
        if let Some(c) = vocab.clone_id(id) {
            for t in [tok, out] {
                let e = model.params.get_mut(t);
                let row = e.row(id as usize).to_vec();
                e.row_mut(c as usize).copy_from_slice(&row);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{grad_check, ModelConfig, ParamSet, Tensor};

    fn loss_of(rows: &[Vec<f64>], pairs: &[(usize, usize)], tau: f64, include_self: bool) -> f64 {
        let mut p = ParamSet::new();
        p.push("h", Tensor::from_rows(rows));
        let mut g = Graph::new(&p);
        let h = g.param(0);
        let l = contrastive_layer_loss(&mut g, h, pairs, tau, include_self).unwrap();
        g.scalar(l)
    }

    #[test]
    fn hand_values() {
        let two = loss_of(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[(0, 1)], 1.0, true);
        assert!((two - std::f64::consts::LN_2).abs() < 1e-12);
        let e = std::f64::consts::E;
        let three = loss_of(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], &[(0, 1)], 1.0, true);
        assert!((three + (e / (2.0 * e + 1.0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn scale_and_order_invariance() {
        let rows = vec![vec![0.3, -1.2, 0.5], vec![0.1, 0.9, 2.0], vec![-0.7, 0.4, 0.2], vec![1.5, 0.0, -0.3]];
        let base = loss_of(&rows, &[(0, 1), (2, 3)], 0.1, true);
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| 5.0 * x).collect()).collect();
        assert!((loss_of(&scaled, &[(0, 1), (2, 3)], 0.1, true) - base).abs() < 1e-9);
        assert!((loss_of(&rows, &[(3, 2), (1, 0)], 0.1, true) - base).abs() < 1e-12);
    }

    #[test]
    fn self_term_floor_is_ln2() {
        let l = loss_of(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![-1.0, 0.5]], &[(0, 1)], 0.05, true);
        assert!(l >= std::f64::consts::LN_2 - 1e-12);
        let ex = loss_of(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![-1.0, 0.5]], &[(0, 1)], 0.05, false);
        assert!(ex < l);
    }

    #[test]
    fn zero_vector_is_numerical_error() {
        let mut p = ParamSet::new();
        p.push("h", Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]));
        let mut g = Graph::new(&p);
        let h = g.param(0);
        let err = contrastive_layer_loss(&mut g, h, &[(0, 1)], 1.0, true).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn layer_sum_has_l_plus_two_terms_and_passes_gradcheck() {
        let m = Transformer::<f64>::new(ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            context: 8,
            vocab_size: 32,
            init_std: 0.3,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let batch = PairBatch { items: vec![vec![3, 4], vec![5], vec![6, 7, 8], vec![9]], pairs: vec![(0, 1), (2, 3)] };
        let mut g = Graph::new(&m.params);
        let (total, terms) = align_loss_all_layers(&m, &mut g, &batch, 0.5, true).unwrap();
        assert_eq!(terms.len(), 4);
        let sum: f64 = terms.iter().map(|&t| g.scalar(t)).sum();
        assert!((g.scalar(total) - sum).abs() < 1e-12);
        let report = grad_check(
            &m.params,
            |g| Ok(align_loss_all_layers(&m, g, &batch, 0.5, true)?.0),
            40,
            1e-5,
            1,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn perfect_init_copies_both_embeddings() {
        let v = Vocab::train(["a b c"], &Default::default()).unwrap().with_clones("§").unwrap();
        let mut m = Transformer::<f32>::new(ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            context: 8,
            vocab_size: v.len(),
            ..Default::default()
        })
        .unwrap();
        perfect_align_init(&mut m, &v).unwrap();
        for id in 0..v.len() as u32 {
            if let Some(c) = v.clone_id(id) {
                assert_eq!(m.tok_emb().row(id as usize), m.tok_emb().row(c as usize));
                assert_eq!(m.out_emb().row(id as usize), m.out_emb().row(c as usize));
            }
        }
        let plain = Vocab::train(["a"], &Default::default()).unwrap();
        assert!(perfect_align_init(&mut m, &plain).is_err());
    }
}
