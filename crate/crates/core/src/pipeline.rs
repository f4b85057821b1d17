//! One function per pipeline stage. Each reads the artifacts of earlier
//! stages from the data and run directories, writes its own artifacts and a
//! manifest, and returns the manifest path alongside its result.
//!
//! ```text
//! <data_dir>/lexicon.json  corpus/{base,clone,eval}.txt  zsclt/{train,test}.tsv
//!            vocab.txt  align.tsv  knowledge.tsv  probes.tsv
//! <run_dir>/schedule.tsv  stage1_schedule.tsv  metrics.jsonl
//!           prealign/  init/  checkpoints/step-NNNNNNN/  eval/*.json  report/*.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::align::AlignmentTable;
use crate::codeswitch::{CodeswitchMode, SwitchTable};
use crate::config::{ClonePool, Config, InitMethod};
use crate::corpus::clone::clone_words;
use crate::corpus::io::{read_docs, write_docs};
use crate::corpus::knowledge::{load_probes, make_probes, save_probes, KnowledgeSet, Language, Probe};
use crate::corpus::natural::{category_pair_task, generate_corpus, load_pairs, save_pairs, Lexicon, PairTask};
use crate::corpus::schedule::{Mix, Schedule, ScheduleSpec};
use crate::data::{DocPool, Pools};
use crate::error::{Error, IoContext, Result};
use crate::eval::{
    clka_probe, embedding_alignment_score, leak_ratio, perplexity, zsclt_train_eval, AlignmentScore, ClkaResult,
    LeakResult, Perplexity, WordClassifier, WordFilter, ZsCltResult,
};
use crate::manifest::RunManifest;
use crate::metrics::{read_metrics, MetricRecord, MetricsWriter};
use crate::model::{ModelState, Transformer};
use crate::prealign::{perfect_align_init, run_prealign, PreAlignData};
use crate::pretrain::{latest_checkpoint, AlignTracking, EvalSets, PretrainData, Progress, RunOutput};
use crate::tokenizer::{count_words, Vocab};

/// Files under the shared data directory.
pub struct DataFiles(pub PathBuf);

impl DataFiles {
    pub fn lexicon(&self) -> PathBuf {
        self.0.join("lexicon.json")
    }
    pub fn base(&self) -> PathBuf {
        self.0.join("corpus/base.txt")
    }
    pub fn clone_docs(&self) -> PathBuf {
        self.0.join("corpus/clone.txt")
    }
    pub fn eval(&self) -> PathBuf {
        self.0.join("corpus/eval.txt")
    }
    pub fn zsclt_train(&self) -> PathBuf {
        self.0.join("zsclt/train.tsv")
    }
    pub fn zsclt_test(&self) -> PathBuf {
        self.0.join("zsclt/test.tsv")
    }
    pub fn vocab(&self) -> PathBuf {
        self.0.join("vocab.txt")
    }
    pub fn align(&self) -> PathBuf {
        self.0.join("align.tsv")
    }
    pub fn knowledge(&self) -> PathBuf {
        self.0.join("knowledge.tsv")
    }
    pub fn probes(&self) -> PathBuf {
        self.0.join("probes.tsv")
    }
}

/// Files under one run directory.
pub struct RunFiles(pub PathBuf);

impl RunFiles {
    pub fn schedule(&self) -> PathBuf {
        self.0.join("schedule.tsv")
    }
    pub fn stage1_schedule(&self) -> PathBuf {
        self.0.join("stage1_schedule.tsv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.jsonl")
    }
    pub fn prealign(&self) -> PathBuf {
        self.0.join("prealign")
    }
    pub fn init(&self) -> PathBuf {
        self.0.join("init")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.0.join("checkpoints")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.0.join("eval")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.0.join("report")
    }
}

fn files(cfg: &Config) -> (DataFiles, RunFiles) {
    let p = cfg.paths();
    (DataFiles(p.data_dir), RunFiles(p.run_dir))
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::data(format!("{} is missing; run `{producer}` first", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).at(d)?;
    }
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::data(e.to_string()))?;
    fs::write(path, text + "\n").at(path)
}

/// Generate the natural corpus, split it, render the clone split, and
/// write the zero-shot transfer task.
pub fn synth_clone(cfg: &Config) -> Result<PathBuf> {
    let (d, _) = files(cfg);
    let seeds = cfg.seeds();
    let (lex, docs) = generate_corpus(&cfg.corpus, seeds.corpus)?;
    let n = docs.len();
    let (n_eval, n_clone) = (cfg.split.eval_docs, cfg.split.clone_docs);
    let base = &docs[..n - n_eval - n_clone];
    let clone: Vec<String> = docs[n - n_eval - n_clone..n - n_eval].iter().map(|t| clone_words(t, &cfg.run.marker)).collect();
    let eval = &docs[n - n_eval..];
    fs::create_dir_all(d.0.join("corpus")).at(&d.0)?;
    fs::create_dir_all(d.0.join("zsclt")).at(&d.0)?;
    lex.save(&d.lexicon())?;
    write_docs(&d.base(), base)?;
    write_docs(&d.clone_docs(), &clone)?;
    write_docs(&d.eval(), eval)?;
    let z = &cfg.zsclt;
    let task = category_pair_task(&lex, z.train_pairs, z.test_pairs, cfg.corpus.lexicon.zipf_exponent, seeds.corpus);
    save_pairs(&task.train, &d.zsclt_train())?;
    save_pairs(&task.test, &d.zsclt_test())?;
    let mut m = RunManifest::new("synth-clone", cfg, &[])?;
    m.outputs = vec![d.lexicon(), d.base(), d.clone_docs(), d.eval(), d.zsclt_train(), d.zsclt_test()];
    m.write(&d.0)
}

/// Train the vocabulary on the base split and add clone tokens. The word
/// inventory and the clone alignment table cover every word of the
/// source-language pretraining text: the base split plus all knowledge
/// documents.
pub fn build_vocab(cfg: &Config) -> Result<PathBuf> {
    let (d, _) = files(cfg);
    require(&d.base(), "synth-clone")?;
    require(&d.knowledge(), "gen-knowledge")?;
    let docs = read_docs(&d.base())?;
    let set = KnowledgeSet::load(&d.knowledge())?;
    let facts: Vec<String> = (0..set.n_periods())
        .flat_map(|p| set.documents(p, cfg.knowledge.paraphrase_share))
        .map(|k| k.text)
        .collect();
    let inventory = count_words(docs.iter().chain(&facts).map(String::as_str));
    let vocab = Vocab::train(docs.iter().map(String::as_str), &cfg.tokenizer)?
        .with_inventory(inventory)
        .with_clones(&cfg.run.marker)?;
    vocab.save(&d.vocab())?;
    AlignmentTable::from_clone_map(&vocab)?.save(&d.align())?;
    let mut m = RunManifest::new("build-vocab", cfg, &[&d.base(), &d.knowledge()])?;
    m.outputs = vec![d.vocab(), Vocab::inventory_path(&d.vocab()), d.align()];
    m.write(&d.0)
}

pub fn gen_knowledge(cfg: &Config) -> Result<PathBuf> {
    let (d, _) = files(cfg);
    require(&d.lexicon(), "synth-clone")?;
    let lex = Lexicon::load(&d.lexicon())?;
    let seed = cfg.seeds().knowledge;
    let set = KnowledgeSet::generate(&cfg.knowledge, &lex, seed)?;
    set.save(&d.knowledge())?;
    save_probes(&make_probes(&set, &lex, cfg.knowledge.distractors, seed)?, &d.probes())?;
    let mut m = RunManifest::new("gen-knowledge", cfg, &[&d.lexicon()])?;
    m.outputs = vec![d.knowledge(), d.probes()];
    m.write(&d.0)
}

/// Tokenized corpus artifacts shared by the training and evaluation stages.
pub struct Corpus {
    pub vocab: Vocab,
    pub base: DocPool,
    pub clone: DocPool,
    pub eval_base: DocPool,
    pub eval_clone: DocPool,
    /// Knowledge documents per period.
    pub knowledge: Vec<DocPool>,
    pub probes: Vec<Probe>,
    pub table: AlignmentTable,
    /// Table words used for alignment in both stages.
    pub seen: BTreeSet<String>,
}

impl Corpus {
    pub fn load(cfg: &Config) -> Result<Self> {
        let (d, _) = files(cfg);
        for (p, by) in [(d.base(), "synth-clone"), (d.vocab(), "build-vocab"), (d.knowledge(), "gen-knowledge")] {
            require(&p, by)?;
        }
        let vocab = Vocab::load(&d.vocab(), Some(&cfg.run.marker))?;
        let base = DocPool::tokenize(&vocab, &read_docs(&d.base())?);
        let clone = match cfg.schedule.clone_pool {
            ClonePool::Clone => DocPool::tokenize(&vocab, &read_docs(&d.clone_docs())?),
            ClonePool::Base => base.cloned(&vocab)?,
        };
        let eval_docs = read_docs(&d.eval())?;
        let eval_docs = &eval_docs[..eval_docs.len().min(cfg.eval.ppl_docs)];
        let eval_base = DocPool::tokenize(&vocab, eval_docs);
        let eval_clone = eval_base.cloned(&vocab)?;
        let set = KnowledgeSet::load(&d.knowledge())?;
        if set.n_periods() != cfg.knowledge.n_periods {
            return Err(Error::data(format!(
                "{} has {} periods, configuration asks for {}",
                d.knowledge().display(),
                set.n_periods(),
                cfg.knowledge.n_periods
            )));
        }
        let knowledge = (0..set.n_periods())
            .map(|p| {
                let texts: Vec<String> = set.documents(p, cfg.knowledge.paraphrase_share).into_iter().map(|k| k.text).collect();
                DocPool::tokenize(&vocab, &texts)
            })
            .collect();
        let probes = load_probes(&d.probes())?;
        let table = AlignmentTable::load(&d.align())?.with_frequencies(vocab.word_counts());
        let seen = table.select_beta(cfg.init.beta)?;
        Ok(Self { vocab, base, clone, eval_base, eval_clone, knowledge, probes, table, seen })
    }

    pub fn pools(&self) -> Pools<'_> {
        Pools { base: &self.base, clone: &self.clone, knowledge: &self.knowledge }
    }

    pub fn probes_by_period(&self, n_periods: usize) -> Vec<Vec<Probe>> {
        let mut out = vec![Vec::new(); n_periods];
        for p in &self.probes {
            if let Some(v) = out.get_mut(p.triplet.period) {
                v.push(p.clone());
            }
        }
        out
    }
}

pub fn schedule_spec(cfg: &Config) -> ScheduleSpec {
    let s = &cfg.schedule;
    ScheduleSpec {
        n_periods: cfg.knowledge.n_periods,
        steps_per_period: s.steps_per_period,
        tokens_per_step: s.tokens_per_step,
        token_ratio: s.token_ratio,
        seed: cfg.seeds().schedule,
        mix: s.mix,
    }
}

/// Stage-1 LM schedule: one period of `prealign.steps` steps spending at
/// most `lm_budget_fraction` of the stage-2 token budget.
pub fn stage1_spec(cfg: &Config) -> Result<ScheduleSpec> {
    let budget = (cfg.prealign.lm_budget_fraction * cfg.pretrain_tokens() as f64).floor() as usize;
    let tokens_per_step = budget / cfg.prealign.steps as usize;
    if tokens_per_step == 0 {
        return Err(Error::usage("stage-1 LM budget is smaller than one token per step"));
    }
    Ok(ScheduleSpec {
        n_periods: 1,
        steps_per_period: cfg.prealign.steps,
        tokens_per_step,
        token_ratio: cfg.schedule.token_ratio,
        seed: crate::rng::child_seed(cfg.seeds().schedule, "stage1"),
        mix: Mix::Joint,
    })
}

pub fn build_schedule(cfg: &Config) -> Result<PathBuf> {
    let (d, r) = files(cfg);
    let c = Corpus::load(cfg)?;
    let lens: Vec<Vec<usize>> = c.knowledge.iter().map(DocPool::lens).collect();
    let sched = Schedule::build(schedule_spec(cfg), &c.base.lens(), &c.clone.lens(), &lens)?;
    fs::create_dir_all(&r.0).at(&r.0)?;
    sched.save(&r.schedule())?;
    let mut outputs = vec![r.schedule()];
    if cfg.init.method == InitMethod::Prealign {
        Schedule::build(stage1_spec(cfg)?, &c.base.lens(), &c.clone.lens(), &[])?.save(&r.stage1_schedule())?;
        outputs.push(r.stage1_schedule());
    }
    let mut m = RunManifest::new("schedule", cfg, &[&d.base(), &d.clone_docs(), &d.vocab(), &d.knowledge()])?;
    m.outputs = outputs;
    m.write(&r.0)
}

/// Build the stage-2 initialization in `<run_dir>/init` according to
/// `init.method`; stage 1 also writes its final state to `prealign/`.
pub fn prealign(cfg: &Config) -> Result<PathBuf> {
    let (d, r) = files(cfg);
    let c = Corpus::load(cfg)?;
    let seeds = cfg.seeds();
    let mut model = Transformer::new(cfg.model.model_config(c.vocab.len(), seeds.model))?;
    let mut inputs = vec![d.vocab(), d.align()];
    fs::create_dir_all(&r.0).at(&r.0)?;
    let mut metrics = MetricsWriter::create(&r.metrics())?;
    let mut stage1_steps = 0;
    match cfg.init.method {
        InitMethod::Random => {}
        InitMethod::Perfect => perfect_align_init(&mut model, &c.vocab)?,
        InitMethod::Prealign => {
            require(&r.stage1_schedule(), "schedule")?;
            let sched = Schedule::load(&r.stage1_schedule())?;
            if sched.spec != stage1_spec(cfg)? {
                return Err(Error::data(format!("{} does not match the configuration; rerun `schedule`", r.stage1_schedule().display())));
            }
            inputs.push(r.stage1_schedule());
            let mut state = ModelState::new(model, seeds.train);
            let data = PreAlignData { vocab: &c.vocab, table: &c.table, seen: &c.seen, lm_schedule: &sched, pools: c.pools() };
            run_prealign(&mut state, &data, &cfg.prealign, &cfg.optim, &mut metrics)?;
            state.save(&r.prealign(), &json!({ "stage": "prealign" }))?;
            stage1_steps = state.step;
            model = state.model;
        }
    }
    metrics.flush()?;
    let init = ModelState::new(model, seeds.train);
    let progress = Progress { metrics_bytes: metrics.bytes(), ..Default::default() };
    init.save(&r.init(), &json!({ "stage": "init", "stage1_steps": stage1_steps, "progress": progress }))?;
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut m = RunManifest::new("prealign", cfg, &refs)?;
    m.outputs = vec![r.init(), r.metrics()];
    if stage1_steps > 0 {
        m.outputs.push(r.prealign());
    }
    m.write(&r.0)
}

/// Stage-2 options that are not part of the configuration.
#[derive(Clone, Copy, Debug, Default)]
pub struct PretrainOptions {
    /// Continue from the latest checkpoint instead of `init/`.
    pub resume: bool,
    pub stop_after: Option<u64>,
}

pub fn pretrain(cfg: &Config, opts: PretrainOptions) -> Result<PathBuf> {
    let (d, r) = files(cfg);
    require(&r.init(), "prealign")?;
    require(&r.schedule(), "schedule")?;
    let c = Corpus::load(cfg)?;
    let sched = Schedule::load(&r.schedule())?;
    if sched.spec != schedule_spec(cfg) {
        return Err(Error::data(format!("{} does not match the configuration; rerun `schedule`", r.schedule().display())));
    }
    let init_extra = ModelState::read_extra(&r.init())?;
    let offset = init_extra.get("stage1_steps").and_then(|v| v.as_u64()).unwrap_or(0);
    let from = match (opts.resume, latest_checkpoint(&r.checkpoints())) {
        (true, Some(p)) => p,
        _ => {
            if r.checkpoints().exists() {
                fs::remove_dir_all(r.checkpoints()).at(r.checkpoints())?;
            }
            r.init()
        }
    };
    let (mut state, extra) = ModelState::load(&from)?;
    let progress = Progress::from_extra(&extra)?;
    let mut metrics = MetricsWriter::resume(&r.metrics(), progress.metrics_bytes)?;
    let switch = if cfg.pretrain.switching() {
        Some(SwitchTable::build(&c.table, &c.seen, &c.vocab, cfg.pretrain.bidirectional)?)
    } else {
        None
    };
    let probes = c.probes_by_period(sched.spec.n_periods);
    let probes: &[Vec<Probe>] = if sched.spec.mix == Mix::Joint { &probes } else { &[] };
    let data = PretrainData {
        vocab: &c.vocab,
        schedule: &sched,
        pools: c.pools(),
        switch_table: switch.as_ref(),
        probes,
        eval: Some(EvalSets { base: &c.eval_base, clone: &c.eval_clone }),
        tracking: Some(AlignTracking { table: &c.table, seen: &c.seen }),
    };
    let out = RunOutput { metrics: &mut metrics, checkpoints: &r.checkpoints(), stop_after: opts.stop_after, step_offset: offset };
    crate::pretrain::run_pretrain(&mut state, progress, &data, &cfg.pretrain, &cfg.optim, out)?;
    let mut m = RunManifest::new("pretrain", cfg, &[&d.vocab(), &d.align(), &r.schedule(), &from])?;
    m.outputs = vec![r.checkpoints(), r.metrics()];
    m.write(&r.0)
}

/// Checkpoint evaluated by the `eval-*` commands: `explicit`, else the
/// latest stage-2 checkpoint, else `init/`.
pub fn eval_checkpoint(cfg: &Config, explicit: Option<&Path>) -> Result<PathBuf> {
    let (_, r) = files(cfg);
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    if let Some(p) = latest_checkpoint(&r.checkpoints()) {
        return Ok(p);
    }
    require(&r.init(), "prealign")?;
    Ok(r.init())
}

fn eval_manifest(cfg: &Config, command: &str, ckpt: &Path, output: &Path) -> Result<PathBuf> {
    let (_, r) = files(cfg);
    let mut m = RunManifest::new(command, cfg, &[ckpt])?;
    m.outputs = vec![output.to_path_buf()];
    m.write(&r.eval_dir())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    pub base: Perplexity,
    pub clone: Perplexity,
    /// Clone held-out text restricted to words inside / outside the seen set.
    pub clone_seen: Option<Perplexity>,
    pub clone_unseen: Option<Perplexity>,
}

pub fn eval_ppl(cfg: &Config, checkpoint: Option<&Path>) -> Result<(PathBuf, PplReport)> {
    let (_, r) = files(cfg);
    let ck = eval_checkpoint(cfg, checkpoint)?;
    let c = Corpus::load(cfg)?;
    let (state, _) = ModelState::load(&ck)?;
    let m = &state.model;
    let classes = WordClassifier::new(&c.vocab, &c.table, &c.seen);
    let split = |f| perplexity(m, &c.vocab, &c.eval_clone, f, Some(&classes)).ok();
    let rep = PplReport {
        base: perplexity(m, &c.vocab, &c.eval_base, WordFilter::All, None)?,
        clone: perplexity(m, &c.vocab, &c.eval_clone, WordFilter::All, None)?,
        clone_seen: split(WordFilter::Seen),
        clone_unseen: split(WordFilter::Unseen),
    };
    let out = r.eval_dir().join("ppl.json");
    write_json(&out, &rep)?;
    Ok((eval_manifest(cfg, "eval-ppl", &ck, &out)?, rep))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClkaReport {
    pub base: ClkaResult,
    pub clone: ClkaResult,
}

/// Probe every knowledge item against one checkpoint.
pub fn eval_clka(cfg: &Config, checkpoint: Option<&Path>) -> Result<(PathBuf, ClkaReport)> {
    let (d, r) = files(cfg);
    let ck = eval_checkpoint(cfg, checkpoint)?;
    require(&d.probes(), "gen-knowledge")?;
    let vocab = Vocab::load(&d.vocab(), Some(&cfg.run.marker))?;
    let probes = load_probes(&d.probes())?;
    let (state, _) = ModelState::load(&ck)?;
    let n = cfg.pretrain.clka_normalize;
    let rep = ClkaReport {
        base: clka_probe(&state.model, &vocab, &probes, Language::Base, n)?,
        clone: clka_probe(&state.model, &vocab, &probes, Language::Clone, n)?,
    };
    let out = r.eval_dir().join("clka.json");
    write_json(&out, &rep)?;
    Ok((eval_manifest(cfg, "eval-clka", &ck, &out)?, rep))
}

pub fn eval_zsclt(cfg: &Config, checkpoint: Option<&Path>) -> Result<(PathBuf, ZsCltResult)> {
    let (d, r) = files(cfg);
    let ck = eval_checkpoint(cfg, checkpoint)?;
    require(&d.zsclt_train(), "synth-clone")?;
    let vocab = Vocab::load(&d.vocab(), Some(&cfg.run.marker))?;
    let task = PairTask { train: load_pairs(&d.zsclt_train())?, test: load_pairs(&d.zsclt_test())? };
    let (state, _) = ModelState::load(&ck)?;
    let rep = zsclt_train_eval(&state.model, &vocab, &task, &cfg.zsclt)?;
    let out = r.eval_dir().join("zsclt.json");
    write_json(&out, &rep)?;
    Ok((eval_manifest(cfg, "eval-zsclt", &ck, &out)?, rep))
}

pub fn probe_align(cfg: &Config, checkpoint: Option<&Path>) -> Result<(PathBuf, AlignmentScore)> {
    let (d, r) = files(cfg);
    let ck = eval_checkpoint(cfg, checkpoint)?;
    let vocab = Vocab::load(&d.vocab(), Some(&cfg.run.marker))?;
    let table = AlignmentTable::load(&d.align())?.with_frequencies(vocab.word_counts());
    let seen = table.select_beta(cfg.init.beta)?;
    let (state, _) = ModelState::load(&ck)?;
    let rep = embedding_alignment_score(&state.model, &vocab, &table, &seen)?;
    let out = r.eval_dir().join("align.json");
    write_json(&out, &rep)?;
    Ok((eval_manifest(cfg, "probe-align", &ck, &out)?, rep))
}

/// Prompts: the first `leak_prompt_tokens` tokens of each held-out document.
pub fn leak_prompts(cfg: &Config, c: &Corpus) -> Vec<Vec<u32>> {
    c.eval_base.docs.iter().map(|doc| doc.ids[..doc.len().min(cfg.eval.leak_prompt_tokens.max(1))].to_vec()).collect()
}

pub fn gen_leak(cfg: &Config, checkpoint: Option<&Path>) -> Result<(PathBuf, LeakResult)> {
    let (_, r) = files(cfg);
    let ck = eval_checkpoint(cfg, checkpoint)?;
    let c = Corpus::load(cfg)?;
    let (state, _) = ModelState::load(&ck)?;
    let e = &cfg.eval;
    let rep = leak_ratio(&state.model, &c.vocab, &leak_prompts(cfg, &c), e.leak_samples, e.leak_gen_len, e.leak_temperature, cfg.seeds().eval)?;
    let out = r.eval_dir().join("leak.json");
    write_json(&out, &rep)?;
    Ok((eval_manifest(cfg, "gen-leak", &ck, &out)?, rep))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    /// Period-end probe accuracy per frequency level.
    Clka,
    /// Aligned-pair embedding cosine over training.
    Cosine,
    /// Clone perplexity on seen and unseen words.
    SeenUnseen,
    /// Held-out perplexity over training.
    Ppl,
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clka" => Ok(Self::Clka),
            "cosine" => Ok(Self::Cosine),
            "seen_unseen" => Ok(Self::SeenUnseen),
            "ppl" => Ok(Self::Ppl),
            _ => Err(Error::usage(format!("unknown figure {s:?} (expected clka, cosine, seen_unseen, ppl)"))),
        }
    }
}

impl Figure {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clka => "clka",
            Self::Cosine => "cosine",
            Self::SeenUnseen => "seen_unseen",
            Self::Ppl => "ppl",
        }
    }
}

/// CSV text for one figure from a run's metrics stream and eval results.
pub fn report_csv(run_dir: &Path, figure: Figure) -> Result<String> {
    let r = RunFiles(run_dir.to_path_buf());
    let recs = || -> Result<Vec<MetricRecord>> {
        require(&r.metrics(), "prealign")?;
        read_metrics(&r.metrics())
    };
    let mut out = String::new();
    match figure {
        Figure::Clka => {
            out.push_str("period,step,language,level,accuracy\n");
            let mut period_of: BTreeMap<u64, usize> = BTreeMap::new();
            for rec in recs()?.into_iter().filter(|x| x.metric == "clka_acc") {
                let n = period_of.len();
                let p = *period_of.entry(rec.step).or_insert(n);
                let level = rec.level.map_or_else(|| "all".to_string(), |l| l.to_string());
                out.push_str(&format!("{p},{},{},{level},{}\n", rec.step, rec.split, rec.value));
            }
        }
        Figure::Cosine | Figure::Ppl => {
            let (name, header) = match figure {
                Figure::Cosine => ("aligned_cosine", "step,split,cosine\n"),
                _ => ("ppl", "step,language,ppl\n"),
            };
            out.push_str(header);
            for rec in recs()?.into_iter().filter(|x| x.metric == name) {
                out.push_str(&format!("{},{},{}\n", rec.step, rec.split, rec.value));
            }
        }
        Figure::SeenUnseen => {
            let p = r.eval_dir().join("ppl.json");
            require(&p, "eval-ppl")?;
            let text = fs::read_to_string(&p).at(&p)?;
            let rep: PplReport = serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", p.display())))?;
            out.push_str("words,ppl,positions\n");
            for (name, v) in [("seen", rep.clone_seen), ("unseen", rep.clone_unseen)] {
                if let Some(v) = v {
                    out.push_str(&format!("{name},{},{}\n", v.ppl, v.count));
                }
            }
            out.push_str(&format!("all,{},{}\n", rep.clone.ppl, rep.clone.count));
        }
    }
    Ok(out)
}

pub fn report(cfg: &Config, run_dir: Option<&Path>, figure: Figure) -> Result<(PathBuf, PathBuf)> {
    let dir = run_dir.map_or_else(|| cfg.paths().run_dir, Path::to_path_buf);
    let csv = report_csv(&dir, figure)?;
    let r = RunFiles(dir.clone());
    let out = r.report_dir().join(format!("{}.csv", figure.as_str()));
    fs::create_dir_all(r.report_dir()).at(r.report_dir())?;
    fs::write(&out, csv).at(&out)?;
    let metrics = r.metrics();
    let inputs: Vec<&Path> = if metrics.exists() { vec![metrics.as_path()] } else { vec![] };
    let mut m = RunManifest::new("report", cfg, &inputs)?;
    m.outputs = vec![out.clone()];
    Ok((m.write(&r.report_dir())?, out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// Clone documents only, at the joint run's clone budget.
    OnlyTgt,
    /// Clone documents only, at the full token budget.
    FullTgt,
    /// The joint corpus without stage 1 or codeswitching.
    Joint,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "only_tgt" => Ok(Self::OnlyTgt),
            "full_tgt" => Ok(Self::FullTgt),
            "joint" => Ok(Self::Joint),
            _ => Err(Error::usage(format!("unknown baseline {s:?} (expected only_tgt, full_tgt, joint)"))),
        }
    }
}

/// Derive a baseline configuration from a PreAlign configuration.
pub fn baseline_config(cfg: &Config, which: Baseline) -> Config {
    let mut c = cfg.clone();
    c.init.method = InitMethod::Random;
    c.pretrain.codeswitch_mode = CodeswitchMode::Off;
    match which {
        Baseline::Joint => {}
        Baseline::OnlyTgt => {
            let spec = schedule_spec(cfg);
            c.schedule.mix = Mix::TargetOnly;
            c.schedule.tokens_per_step = (spec.clone_budget() / spec.steps_per_period as usize).max(1);
        }
        Baseline::FullTgt => {
            c.schedule.mix = Mix::TargetOnly;
            c.schedule.clone_pool = ClonePool::Base;
        }
    }
    c
}

/// Every stage from data generation to the end of stage 2.
pub fn run_all(cfg: &Config) -> Result<()> {
    let (d, _) = files(cfg);
    if !d.lexicon().exists() {
        synth_clone(cfg)?;
    }
    if !d.probes().exists() {
        gen_knowledge(cfg)?;
    }
    if !d.vocab().exists() {
        build_vocab(cfg)?;
    }
    build_schedule(cfg)?;
    prealign(cfg)?;
    pretrain(cfg, PretrainOptions::default())?;
    Ok(())
}
