//! Stage 2: causal LM training over a period schedule with optional
//! codeswitching, period-end knowledge probes, and resumable checkpoints.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::align::AlignmentTable;
use crate::codeswitch::{CodeswitchMode, SwitchTable};
use crate::corpus::knowledge::{Language, Probe};
use crate::corpus::schedule::Schedule;
use crate::data::{assemble_batch, DocPool, LmBatch, Pools, SwitchSpec};
use crate::error::{Error, Result};
use crate::eval::{clka_probe, embedding_alignment_score, perplexity, WordFilter};
use crate::metrics::{MetricRecord, MetricsWriter};
use crate::model::{clip_grad_norm, loss_lm, AdamConfig, CosineSchedule, Graph, ModelState};
use crate::rng::stream;
use crate::tokenizer::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Per-word switching probability.
    pub codeswitch_ratio: f64,
    pub codeswitch_mode: CodeswitchMode,
    /// Also switch translations back to their source words.
    pub bidirectional: bool,
    pub lr: f64,
    pub min_lr: f64,
    /// Steps between held-out evaluations; 0 disables them.
    pub eval_interval: u64,
    pub log_interval: u64,
    /// Score probe statements by mean rather than total log-probability.
    pub clka_normalize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            codeswitch_ratio: 0.05,
            codeswitch_mode: CodeswitchMode::InputOnly,
            bidirectional: true,
            lr: 3e-3,
            min_lr: 3e-4,
            eval_interval: 250,
            log_interval: 25,
            clka_normalize: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.codeswitch_ratio) {
            return Err(Error::usage(format!("pretrain.codeswitch_ratio must lie in [0, 1], got {}", self.codeswitch_ratio)));
        }
        if !(self.lr > 0.0) || self.min_lr < 0.0 || self.min_lr > self.lr {
            return Err(Error::usage("pretrain.lr must be positive and pretrain.min_lr within [0, lr]"));
        }
        Ok(())
    }

    pub fn switching(&self) -> bool {
        self.codeswitch_mode != CodeswitchMode::Off && self.codeswitch_ratio > 0.0
    }
}

/// Held-out pools scored at every evaluation.
pub struct EvalSets<'a> {
    pub base: &'a DocPool,
    pub clone: &'a DocPool,
}

/// Alignment tracking over the table used in stage 1.
pub struct AlignTracking<'a> {
    pub table: &'a AlignmentTable,
    pub seen: &'a BTreeSet<String>,
}

pub struct PretrainData<'a> {
    pub vocab: &'a Vocab,
    pub schedule: &'a Schedule,
    pub pools: Pools<'a>,
    pub switch_table: Option<&'a SwitchTable>,
    /// Probe items per period; empty when no knowledge is injected.
    pub probes: &'a [Vec<Probe>],
    pub eval: Option<EvalSets<'a>>,
    pub tracking: Option<AlignTracking<'a>>,
}

/// Counters carried across checkpoints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub metrics_bytes: u64,
    pub switched: u64,
    pub eligible: u64,
}

impl Progress {
    pub fn from_extra(extra: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(extra.get("progress").cloned().unwrap_or_default())
            .map_err(|e| Error::data(format!("checkpoint progress record: {e}")))
    }

    fn extra(&self) -> serde_json::Value {
        json!({ "stage": "pretrain", "progress": self })
    }
}

pub fn checkpoint_dir(root: &Path, step: u64) -> PathBuf {
    root.join(format!("step-{step:07}"))
}

/// Final checkpoint directory under `root`, the one with the highest step.
pub fn latest_checkpoint(root: &Path) -> Option<PathBuf> {
    let mut best: Option<(u64, PathBuf)> = None;
    for e in std::fs::read_dir(root).ok()?.flatten() {
        let name = e.file_name();
        let Some(step) = name.to_str().and_then(|n| n.strip_prefix("step-")).and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        if e.path().join("manifest.json").is_file() && best.as_ref().is_none_or(|(b, _)| step > *b) {
            best = Some((step, e.path()));
        }
    }
    best.map(|(_, p)| p)
}

/// One optimizer step on the masked LM loss. Returns the loss and the
/// pre-clip gradient norm.
pub fn lm_step(state: &mut ModelState, batch: &LmBatch, lr: f64, adam: &AdamConfig) -> Result<(f64, f64)> {
    let (loss, mut grads) = {
        let mut g = Graph::new(&state.model.params);
        let fwd = state.model.forward(&mut g, &batch.packed, true)?;
        let l = loss_lm(&mut g, fwd.logits.expect("logits requested"), &batch.targets, &batch.mask)?;
        let v = g.scalar(l) as f64;
        if !v.is_finite() {
            return Err(Error::numerical(format!("LM loss is not finite at step {}", state.step)));
        }
        (v, g.backward(l))
    };
    let norm = clip_grad_norm(&mut grads, adam.grad_clip);
    state.optim.update(&mut state.model.params, &grads, lr, adam)?;
    state.step += 1;
    Ok((loss, norm))
}

fn evaluate(state: &ModelState, data: &PretrainData<'_>, step: u64, metrics: &mut MetricsWriter) -> Result<()> {
    if let Some(ev) = &data.eval {
        for (split, pool) in [("base", ev.base), ("clone", ev.clone)] {
            if !pool.is_empty() {
                let p = perplexity(&state.model, data.vocab, pool, WordFilter::All, None)?;
                metrics.write(&MetricRecord::new(step, "ppl", split, p.ppl))?;
            }
        }
    }
    if let Some(t) = &data.tracking {
        let s = embedding_alignment_score(&state.model, data.vocab, t.table, t.seen)?;
        metrics.write(&MetricRecord::new(step, "aligned_cosine", "all", s.mean))?;
    }
    Ok(())
}

fn probe_period(
    state: &ModelState,
    data: &PretrainData<'_>,
    period: usize,
    normalize: bool,
    step: u64,
    metrics: &mut MetricsWriter,
) -> Result<()> {
    let Some(probes) = data.probes.get(period).filter(|p| !p.is_empty()) else {
        return Ok(());
    };
    let mut langs = vec![(Language::Base, "base")];
    if data.vocab.marker().is_some() {
        langs.push((Language::Clone, "clone"));
    }
    for (lang, split) in langs {
        let r = clka_probe(&state.model, data.vocab, probes, lang, normalize)?;
        metrics.write(&MetricRecord::new(step, "clka_acc", split, r.accuracy))?;
        for (level, acc) in r.per_level {
            metrics.write(&MetricRecord::new(step, "clka_acc", split, acc).with_level(level))?;
        }
    }
    Ok(())
}

/// Where a run writes and whether it stops early.
pub struct RunOutput<'a> {
    pub metrics: &'a mut MetricsWriter,
    pub checkpoints: &'a Path,
    /// Stop once this many steps are done, as if the process were killed
    /// right after the step's checkpoint.
    pub stop_after: Option<u64>,
    /// Added to every recorded step, so stage-2 records follow stage 1's.
    pub step_offset: u64,
}

/// Train from `state` (step 0 or a checkpoint) to the end of the schedule.
/// A checkpoint is written at the end of every period, after that period's
/// probes.
pub fn run_pretrain(
    state: &mut ModelState,
    mut progress: Progress,
    data: &PretrainData<'_>,
    cfg: &RunConfig,
    adam: &AdamConfig,
    out: RunOutput<'_>,
) -> Result<Progress> {
    cfg.validate()?;
    let total = data.schedule.total_steps();
    let spp = data.schedule.spec.steps_per_period;
    if state.step > total {
        return Err(Error::data(format!("checkpoint step {} is past the schedule end {total}", state.step)));
    }
    let switch = match (cfg.switching(), data.switch_table) {
        (false, _) => None,
        (true, Some(table)) => Some(SwitchSpec { table, ratio: cfg.codeswitch_ratio, mode: cfg.codeswitch_mode }),
        (true, None) => return Err(Error::usage("codeswitching is enabled but no alignment table was given")),
    };
    let sched = CosineSchedule::new(cfg.lr, cfg.min_lr, total);
    let context = state.model.config.context;
    let metrics = out.metrics;
    let off = out.step_offset;
    if state.step == 0 && cfg.eval_interval > 0 {
        evaluate(state, data, off, metrics)?;
    }
    while state.step < total {
        let step = state.step;
        let mut rng = stream(state.seed, "pretrain-batch", step);
        let batch = assemble_batch(data.schedule.step(step), &data.pools, context, switch.as_ref(), &mut rng)?;
        progress.switched += batch.switched as u64;
        progress.eligible += batch.eligible as u64;
        let (loss, _) = match lm_step(state, &batch, sched.lr(step), adam) {
            Err(e) if e.exit_code() == 4 => {
                let dir = out.checkpoints.join(format!("diagnostic-step-{step:07}"));
                state.save(&dir, &json!({ "stage": "pretrain", "diagnostic": e.to_string() }))?;
                log::error!("non-finite loss at step {step}; state saved to {}", dir.display());
                return Err(e);
            }
            r => r?,
        };
        let done = state.step;
        if done.is_multiple_of(cfg.log_interval.max(1)) || done == total {
            metrics.write(&MetricRecord::new(off + done, "lm_loss", "train", loss))?;
            if switch.is_some() && progress.eligible > 0 {
                let share = progress.switched as f64 / progress.eligible as f64;
                metrics.write(&MetricRecord::new(off + done, "codeswitch_share", "train", share))?;
            }
        }
        if cfg.eval_interval > 0 && (done.is_multiple_of(cfg.eval_interval) || done == total) {
            evaluate(state, data, off + done, metrics)?;
        }
        if done.is_multiple_of(spp) {
            let period = (done / spp - 1) as usize;
            probe_period(state, data, period, cfg.clka_normalize, off + done, metrics)?;
            metrics.flush()?;
            progress.metrics_bytes = metrics.bytes();
            state.save(&checkpoint_dir(out.checkpoints, done), &progress.extra())?;
            log::info!("period {period} done at step {done}");
        }
        if out.stop_after == Some(done) {
            break;
        }
    }
    metrics.flush()?;
    progress.metrics_bytes = metrics.bytes();
    Ok(progress)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::schedule::{Mix, ScheduleSpec};
    use crate::metrics::read_metrics;
    use crate::model::{ModelConfig, Transformer};
    use crate::tokenizer::TokenizerConfig;

    fn setup() -> (Vocab, DocPool, DocPool) {
        let docs: Vec<String> = (0..60).map(|i| format!("the cat {} sat on the mat . a dog ran", ["sees", "eats", "likes"][i % 3])).collect();
        let v = Vocab::train(docs.iter().map(String::as_str), &TokenizerConfig::default()).unwrap().with_clones("§").unwrap();
        let base = DocPool::tokenize(&v, &docs[..40]);
        let clone = DocPool::tokenize(&v, &docs[40..]).cloned(&v).unwrap();
        (v, base, clone)
    }

    fn model(v: &Vocab) -> ModelState {
        let m = Transformer::new(ModelConfig { n_layers: 1, d_model: 16, n_heads: 2, context: 16, vocab_size: v.len(), seed: 3, ..Default::default() })
            .unwrap();
        ModelState::new(m, 11)
    }

    fn run(dir: &Path, stop: Option<u64>, resume: bool) -> Vec<u8> {
        let (v, base, clone) = setup();
        let spec = ScheduleSpec { n_periods: 3, steps_per_period: 2, tokens_per_step: 40, token_ratio: 0.25, seed: 1, mix: Mix::Joint };
        let sched = Schedule::build(spec, &base.lens(), &clone.lens(), &[]).unwrap();
        let table = AlignmentTable::from_clone_map(&v).unwrap();
        let seen: BTreeSet<String> = table.words().map(String::from).collect();
        let st = SwitchTable::build(&table, &seen, &v, true).unwrap();
        let data = PretrainData {
            vocab: &v,
            schedule: &sched,
            pools: Pools { base: &base, clone: &clone, knowledge: &[] },
            switch_table: Some(&st),
            probes: &[],
            eval: Some(EvalSets { base: &base, clone: &clone }),
            tracking: None,
        };
        let cfg = RunConfig { log_interval: 1, eval_interval: 3, ..Default::default() };
        let mpath = dir.join("metrics.jsonl");
        let ck = dir.join("ckpt");
        let (mut state, progress, mut w) = if resume {
            let (s, extra) = ModelState::load(&latest_checkpoint(&ck).unwrap()).unwrap();
            let p = Progress::from_extra(&extra).unwrap();
            (s, p, MetricsWriter::resume(&mpath, p.metrics_bytes).unwrap())
        } else {
            (model(&v), Progress::default(), MetricsWriter::create(&mpath).unwrap())
        };
        run_pretrain(&mut state, progress, &data, &cfg, &AdamConfig::default(), RunOutput { metrics: &mut w, checkpoints: &ck, stop_after: stop, step_offset: 7 })
            .unwrap();
        drop(w);
        std::fs::read(&mpath).unwrap()
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_stream() {
        let a = tempfile::tempdir().unwrap();
        let full = run(a.path(), None, false);
        let b = tempfile::tempdir().unwrap();
        run(b.path(), Some(4), false);
        assert_eq!(latest_checkpoint(&b.path().join("ckpt")).unwrap(), checkpoint_dir(&b.path().join("ckpt"), 4));
        // Metrics written after the checkpoint are discarded on resume.
        let resumed = run(b.path(), None, true);
        assert_eq!(full, resumed);
        let recs = read_metrics(&a.path().join("metrics.jsonl")).unwrap();
        assert_eq!(recs.iter().filter(|r| r.metric == "lm_loss").count(), 6);
        assert!(recs.iter().any(|r| r.metric == "ppl" && r.split == "clone"));
        assert!(recs.iter().any(|r| r.metric == "codeswitch_share"));
    }

    #[test]
    fn ratio_out_of_range_is_usage_error() {
        let cfg = RunConfig { codeswitch_ratio: 1.5, ..Default::default() };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
