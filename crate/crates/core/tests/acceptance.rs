//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 5 to 9 train paired desk-scale runs under
//! `$CARGO_TARGET_TMPDIR/acceptance`; the directory is kept for inspection.
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p prealign --test acceptance -- 1 2 3`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use prealign::codeswitch::{apply_switches, codeswitch_augment, CodeswitchMode, SwitchTable};
use prealign::config::{load_config, Config};
use prealign::corpus::knowledge::{make_probes, KnowledgeConfig, KnowledgeSet};
use prealign::corpus::natural::{category_pair_task, generate_corpus, LexiconConfig, NaturalConfig};
use prealign::eval::{clka_with, embedding_alignment_score, sequence_logprobs, zsclt_train_eval, ZsCltConfig};
use prealign::metrics::read_metrics;
use prealign::model::{grad_check, loss_lm, Graph, ModelConfig, ModelState, Packed, Tensor, Transformer};
use prealign::pipeline::{self, Baseline, PretrainOptions};
use prealign::prealign::{align_loss_all_layers, contrastive_layer_loss, perfect_align_init, PairBatch};
use prealign::rng::stream;
use prealign::tokenizer::{Span, TokenizerConfig, Vocab};
use prealign::Result;

type Verdict = Result<(bool, String)>;
type Criterion<F> = (u32, &'static str, F);
type DeskCheck = fn(&Desk) -> Verdict;

// ---------------------------------------------------------------- 1

fn tiny_f64(seed: u64) -> Transformer<f64> {
    Transformer::new(ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        context: 12,
        vocab_size: 32,
        init_std: 0.3,
        seed,
        ..Default::default()
    })
    .expect("tiny model")
}

fn gradient_correctness() -> Verdict {
    let m = tiny_f64(11);
    let seqs: Vec<Vec<u32>> = vec![vec![1, 5, 9, 14, 20, 3, 7], vec![1, 30, 2, 8, 8, 17]];
    let lm_batch = Packed::from_seqs(&seqs.iter().map(|s| &s[..s.len() - 1]).collect::<Vec<_>>());
    let lm_targets: Vec<u32> = seqs.iter().flat_map(|s| s[1..].to_vec()).collect();
    let full = vec![true; lm_targets.len()];

    let spans: Vec<Span> = [(0, 1), (1, 3), (3, 4), (4, 6)].iter().map(|&(start, end)| Span { start, end }).collect();
    let row = [1, 5, 9, 14, 20, 3];
    let cs = apply_switches(&row, &spans, &[(1, vec![25, 26, 27])], CodeswitchMode::InputOnly, 0)?;
    assert!(cs.mask.contains(&false));
    let cs_batch = Packed::from_seqs(&[&cs.input]);

    let pairs = PairBatch { items: vec![vec![3, 4], vec![19], vec![6, 7, 8], vec![22], vec![10], vec![11, 12]], pairs: vec![(0, 1), (2, 3), (4, 5)] };

    let lm = grad_check(
        &m.params,
        |g| {
            let f = m.forward(g, &lm_batch, true)?;
            loss_lm(g, f.logits.expect("logits"), &lm_targets, &full)
        },
        300,
        1e-5,
        1,
    )?;
    let masked = grad_check(
        &m.params,
        |g| {
            let f = m.forward(g, &cs_batch, true)?;
            loss_lm(g, f.logits.expect("logits"), &cs.targets, &cs.mask)
        },
        300,
        1e-5,
        2,
    )?;
    let contrastive =
        grad_check(&m.params, |g| Ok(align_loss_all_layers(&m, g, &pairs, 0.1, true)?.0), 300, 1e-5, 3)?;
    let worst = lm.max_rel_err.max(masked.max_rel_err).max(contrastive.max_rel_err);
    Ok((
        worst < 1e-4,
        format!(
            "max rel err lm {:.1e}, masked {:.1e}, contrastive {:.1e} (< 1e-4)",
            lm.max_rel_err, masked.max_rel_err, contrastive.max_rel_err
        ),
    ))
}

// ---------------------------------------------------------------- 2

/// Supervised (context, target) pairs read directly off the factorization
/// of a row where word `x` between `prefix` and `suffix` became `y`.
fn factorization_oracle(prefix: &[u32], x: &[u32], y: &[u32], suffix: &[u32], mode: CodeswitchMode) -> Vec<(Vec<u32>, u32)> {
    let s: Vec<u32> = prefix.iter().chain(y).chain(suffix).copied().collect();
    let predicted = |k: usize| (s[..k].to_vec(), s[k]);
    match mode {
        CodeswitchMode::Vanilla => (1..s.len()).map(predicted).collect(),
        CodeswitchMode::InputOnly => {
            let mut out: Vec<_> = (1..prefix.len()).map(predicted).collect();
            if !prefix.is_empty() {
                out.push((prefix.to_vec(), x[0]));
            }
            out.extend((prefix.len() + y.len()..s.len()).map(predicted));
            out
        }
        CodeswitchMode::Off => unreachable!("not part of the grid"),
    }
}

fn codeswitch_oracle() -> Verdict {
    let (mut cases, mut agree) = (0, 0);
    for pos in 0..4 {
        for m in 1..=3usize {
            for n in 1..=3usize {
                for mode in [CodeswitchMode::InputOnly, CodeswitchMode::Vanilla] {
                    let mut words: Vec<Vec<u32>> = (0..4).map(|w| vec![10 + 3 * w as u32, 11 + 3 * w as u32]).collect();
                    words[pos] = (0..m as u32).map(|k| 40 + k).collect();
                    let y: Vec<u32> = (0..n as u32).map(|k| 60 + k).collect();
                    let mut tokens = Vec::new();
                    let mut spans = Vec::new();
                    for w in &words {
                        spans.push(Span { start: tokens.len(), end: tokens.len() + w.len() });
                        tokens.extend(w);
                    }
                    let table = SwitchTable::from_pairs(&[(words[pos].clone(), y.clone())]);
                    let mut rng = stream(0, "grid", cases as u64);
                    let b = codeswitch_augment(&tokens, &spans, &table, 1.0, mode, u32::MAX, &mut rng)?;
                    let got: Vec<(Vec<u32>, u32)> =
                        (0..b.len()).filter(|&t| b.mask[t]).map(|t| (b.input[..=t].to_vec(), b.targets[t])).collect();
                    let prefix: Vec<u32> = words[..pos].concat();
                    let suffix: Vec<u32> = words[pos + 1..].concat();
                    let want = factorization_oracle(&prefix, &words[pos], &y, &suffix, mode);
                    cases += 1;
                    agree += (got == want && b.switches.len() == 1) as usize;
                }
            }
        }
    }
    Ok((agree == cases, format!("{agree}/{cases} grid cases agree (position 0..4 x word 1..3 x translation 1..3 x 2 modes)")))
}

// ---------------------------------------------------------------- 3

fn contrastive_value(rows: &[Vec<f64>], pairs: &[(usize, usize)], tau: f64) -> Result<f64> {
    let p = prealign::model::ParamSet::<f64>::new();
    let mut g = Graph::new(&p);
    let x = g.input(Tensor::from_rows(rows));
    let l = contrastive_layer_loss(&mut g, x, pairs, tau, true)?;
    Ok(g.scalar(l))
}

fn contrastive_analytics() -> Verdict {
    let two = contrastive_value(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[(0, 1)], 1.0)?;
    let three = contrastive_value(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], &[(0, 1)], 1.0)?;
    let e = std::f64::consts::E;
    let want_three = -(e / (2.0 * e + 1.0)).ln();
    let mut rng = stream(7, "scale", 0);
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let pairs = [(0, 1), (2, 3), (4, 5)];
    let base = contrastive_value(&rows, &pairs, 0.1)?;
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| {
        let s = rng.gen_range(0.01..100.0);
        r.iter().map(|v| v * s).collect()
    }).collect();
    let moved = contrastive_value(&scaled, &pairs, 0.1)?;
    let (d2, d3, ds) = ((two - 2f64.ln()).abs(), (three - want_three).abs(), (base - moved).abs());
    Ok((
        d2 < 1e-6 && d3 < 1e-6 && ds < 1e-6,
        format!("two-vector {two:.7} (ln 2), three-vector {three:.7} ({want_three:.7}), rescaling shifts loss by {ds:.1e}"),
    ))
}

// ---------------------------------------------------------------- 4

struct World {
    lex: prealign::corpus::natural::Lexicon,
    docs: Vec<String>,
    vocab: Vocab,
}

fn small_world(seed: u64) -> Result<World> {
    let cfg = NaturalConfig {
        docs: 400,
        lexicon: LexiconConfig { nouns_per_category: 10, verbs_per_category: 4, adjectives_per_category: 4, names: 20, places: 8, languages: 4, organizations: 4, ..Default::default() },
        ..Default::default()
    };
    let (lex, docs) = generate_corpus(&cfg, seed)?;
    let tok = TokenizerConfig { max_word_vocab: 150, max_pieces: 120, min_piece_count: 2 };
    let vocab = Vocab::train(docs.iter().map(String::as_str), &tok)?.with_clones("§")?;
    Ok(World { lex, docs, vocab })
}

fn perfect_init_equivalence() -> Verdict {
    let w = small_world(4)?;
    let mut model = Transformer::<f32>::new(ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        context: 128,
        vocab_size: w.vocab.len(),
        init_std: 0.1,
        seed: 9,
        ..Default::default()
    })?;
    perfect_align_init(&mut model, &w.vocab)?;
    let mut worst = 0f64;
    for doc in w.docs.iter().take(40) {
        let mut ids = vec![prealign::tokenizer::BOS_ID];
        ids.extend(w.vocab.encode(doc));
        ids.truncate(model.config.context);
        let cloned = w.vocab.clone_seq(&ids)?;
        let lp = sequence_logprobs(&model, &[&ids, &cloned])?;
        for (a, b) in lp[0].iter().zip(&lp[1]) {
            worst = worst.max((a - b).abs());
        }
    }
    let task = category_pair_task(&w.lex, 300, 200, 1.0, 5);
    let z = zsclt_train_eval(&model, &w.vocab, &task, &ZsCltConfig { epochs: 50, ..Default::default() })?;
    Ok((
        worst < 1e-5 && z.base_accuracy == z.clone_accuracy,
        format!(
            "max per-token loss gap {worst:.1e} over 40 documents; transfer accuracy base {:.3} = clone {:.3}",
            z.base_accuracy, z.clone_accuracy
        ),
    ))
}

// ---------------------------------------------------------------- 10

fn probe_statistics() -> Verdict {
    let w = small_world(6)?;
    let kcfg = KnowledgeConfig { n_periods: 1, per_level: 250, levels: vec![1, 2, 4, 8], ..Default::default() };
    let set = KnowledgeSet::generate(&kcfg, &w.lex, 3)?;
    let probes = make_probes(&set, &w.lex, 3, 3)?;
    let mut rng = stream(21, "random-scorer", 0);
    let random = clka_with(&probes, |_| Ok((0..4).map(|_| rng.gen::<f64>()).collect()))?;
    let oracle = clka_with(&probes, |_| Ok(vec![1.0, 0.0, 0.0, 0.0]))?;
    Ok((
        probes.len() >= 1000 && (random.accuracy - 0.25).abs() <= 0.04 && oracle.accuracy == 1.0,
        format!("random scorer {:.3} over {} items (0.25 +/- 0.04), oracle {:.3}", random.accuracy, probes.len(), oracle.accuracy),
    ))
}

// ---------------------------------------------------------------- 11

const TINY: &str = r#"
[corpus]
docs = 500

[corpus.lexicon]
nouns_per_category = 8
verbs_per_category = 3
adjectives_per_category = 3
names = 20
places = 8
languages = 4
organizations = 4

[split]
clone_docs = 80
eval_docs = 40

[tokenizer]
max_word_vocab = 120
max_pieces = 120

[knowledge]
n_periods = 3
per_level = 3
levels = [1, 4]

[schedule]
steps_per_period = 4
tokens_per_step = 512

[model]
n_layers = 1
d_model = 16
n_heads = 2
context = 64

[prealign]
steps = 4
pair_batch = 16
log_interval = 2
eval_interval = 2

[pretrain]
log_interval = 2
eval_interval = 3

[eval]
ppl_docs = 10
"#;

fn config_at(dir: &Path, text: &str, overrides: &[(&str, String)]) -> Result<Config> {
    fs::create_dir_all(dir).expect("config dir");
    let path = dir.join("run.toml");
    fs::write(&path, text).expect("config written");
    let mut o: Vec<(String, String)> = vec![
        ("run.data_dir".into(), dir.join("data").to_string_lossy().into_owned()),
        ("run.run_dir".into(), dir.join("run").to_string_lossy().into_owned()),
    ];
    o.extend(overrides.iter().map(|(k, v)| (k.to_string(), v.clone())));
    load_config(Some(&path), &o)
}

fn data_stages(cfg: &Config) -> Result<()> {
    pipeline::synth_clone(cfg)?;
    pipeline::gen_knowledge(cfg)?;
    pipeline::build_vocab(cfg)?;
    Ok(())
}

fn train(cfg: &Config) -> Result<()> {
    pipeline::build_schedule(cfg)?;
    pipeline::prealign(cfg)?;
    pipeline::pretrain(cfg, PretrainOptions::default())?;
    Ok(())
}

fn reproducibility(root: &Path) -> Verdict {
    let dir = root.join("repro");
    let _ = fs::remove_dir_all(&dir);
    let cfg = config_at(&dir, TINY, &[])?;
    let metrics = dir.join("run/metrics.jsonl");
    let manifest = dir.join("run/manifest.pretrain.json");
    data_stages(&cfg)?;
    train(&cfg)?;
    let first = fs::read(&metrics).expect("metrics");
    let first_manifest = fs::read(&manifest).expect("manifest");
    fs::remove_dir_all(dir.join("run")).expect("run dir removed");
    train(&cfg)?;
    let rerun_identical = fs::read(&metrics).expect("metrics") == first && fs::read(&manifest).expect("manifest") == first_manifest;

    // 3 periods x 4 steps: stop at every checkpoint and in between.
    let mut resumed = 0;
    let stops = [2u64, 4, 6, 8, 11];
    for &stop in &stops {
        pipeline::prealign(&cfg)?;
        pipeline::pretrain(&cfg, PretrainOptions { resume: false, stop_after: Some(stop) })?;
        pipeline::pretrain(&cfg, PretrainOptions { resume: true, stop_after: None })?;
        resumed += (fs::read(&metrics).expect("metrics") == first) as usize;
    }
    Ok((
        rerun_identical && resumed == stops.len(),
        format!(
            "re-run byte-identical: {rerun_identical}; resume after stop at steps {stops:?}: {resumed}/{} identical",
            stops.len()
        ),
    ))
}

// ---------------------------------------------------------------- desk scale

/// Reduced desk configuration: the reference L=4, d=128, 20M-token runs
/// do not fit the suite's time budget on one core.
const DESK: &str = r#"
[corpus]
docs = 100000

[split]
clone_docs = 1500
eval_docs = 300

[tokenizer]
max_word_vocab = 250
max_pieces = 500

[schedule]
steps_per_period = 250
tokens_per_step = 3000

[model]
n_layers = 2
d_model = 64
n_heads = 4
context = 64

[eval]
ppl_docs = 300
leak_samples = 5000

[zsclt]
train_pairs = 2000
test_pairs = 1000
epochs = 200
"#;

struct Desk {
    root: PathBuf,
    runs: BTreeMap<&'static str, Config>,
    stage1_secs: f64,
}

impl Desk {
    fn cfg(&self, name: &str) -> &Config {
        &self.runs[name]
    }

    fn run_dir(&self, name: &str) -> PathBuf {
        self.cfg(name).paths().run_dir
    }

    fn metrics(&self, name: &str) -> Result<Vec<prealign::metrics::MetricRecord>> {
        read_metrics(&self.run_dir(name).join("metrics.jsonl"))
    }
}

fn desk_runs(root: &Path) -> Result<Desk> {
    let root = root.join("desk");
    let _ = fs::remove_dir_all(&root);
    let mk = |name: &str, o: &[(&str, &str)]| -> Result<Config> {
        let mut over: Vec<(&str, String)> = o.iter().map(|(k, v)| (*k, v.to_string())).collect();
        over.push(("run.name", name.to_string()));
        let mut cfg = config_at(&root, DESK, &over)?;
        cfg.run.run_dir = root.join(name).to_string_lossy().into_owned();
        Ok(cfg)
    };
    let prealign_cfg = mk("prealign", &[])?;
    let mut runs = BTreeMap::new();
    runs.insert("joint", pipeline::baseline_config(&prealign_cfg, Baseline::Joint));
    runs.insert("only_tgt", pipeline::baseline_config(&prealign_cfg, Baseline::OnlyTgt));
    runs.insert("vanilla", mk("vanilla", &[("pretrain.codeswitch_mode", "vanilla")])?);
    for (name, beta) in [("beta25", "0.25"), ("beta50", "0.5"), ("beta75", "0.75")] {
        runs.insert(name, mk(name, &[("init.beta", beta)])?);
    }
    for (name, cfg) in runs.iter_mut() {
        cfg.run.run_dir = root.join(name).to_string_lossy().into_owned();
    }
    runs.insert("prealign", prealign_cfg);

    let t = Instant::now();
    data_stages(&runs["prealign"])?;
    eprintln!("  desk data ready in {:.0}s", t.elapsed().as_secs_f64());
    let mut stage1_secs = 0.0;
    for (name, cfg) in &runs {
        let t = Instant::now();
        pipeline::build_schedule(cfg)?;
        pipeline::prealign(cfg)?;
        if *name == "prealign" {
            stage1_secs = t.elapsed().as_secs_f64();
        }
        pipeline::pretrain(cfg, PretrainOptions::default())?;
        eprintln!("  desk run {name} finished in {:.0}s", t.elapsed().as_secs_f64());
    }
    Ok(Desk { root, runs, stage1_secs })
}

fn stage1_alignment(desk: &Desk) -> Verdict {
    let init_score = |name: &str| -> Result<f64> {
        let cfg = desk.cfg(name);
        let c = pipeline::Corpus::load(cfg)?;
        let (state, _) = ModelState::load(&desk.run_dir(name).join("init"))?;
        Ok(embedding_alignment_score(&state.model, &c.vocab, &c.table, &c.seen)?.mean)
    };
    let aligned = init_score("prealign")?;
    let random = init_score("joint")?;
    Ok((
        aligned >= 0.8 && random.abs() < 0.1 && desk.stage1_secs <= 900.0,
        format!("aligned cosine {aligned:.3} (>= 0.8) vs random init {random:.3} (|.| < 0.1); stage 1 took {:.0}s", desk.stage1_secs),
    ))
}

fn clone_ppl(desk: &Desk, name: &str, eval_as: Option<&str>) -> Result<pipeline::PplReport> {
    // `eval_as` evaluates `name`'s final checkpoint under another run's word split.
    let cfg = desk.cfg(eval_as.unwrap_or(name));
    let ck = prealign::pretrain::latest_checkpoint(&desk.run_dir(name).join("checkpoints")).expect("stage 2 checkpoints");
    Ok(pipeline::eval_ppl(cfg, Some(&ck))?.1)
}

fn lm_ordering(desk: &Desk) -> Verdict {
    let p = clone_ppl(desk, "prealign", None)?.clone.ppl;
    let j = clone_ppl(desk, "joint", None)?.clone.ppl;
    let o = clone_ppl(desk, "only_tgt", None)?.clone.ppl;
    let gain = 1.0 - p / j;
    Ok((
        gain >= 0.05 && j < o,
        format!("clone ppl prealign {p:.2} < joint {j:.2} by {:.1}% (>= 5%), joint < only-tgt {o:.2}", 100.0 * gain),
    ))
}

/// Mean over period-end probes of clone accuracy, overall and per level.
fn clka_means(desk: &Desk, name: &str) -> Result<(f64, BTreeMap<usize, f64>)> {
    let recs: Vec<_> = desk.metrics(name)?.into_iter().filter(|r| r.metric == "clka_acc" && r.split == "clone").collect();
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let overall = mean(recs.iter().filter(|r| r.level.is_none()).map(|r| r.value).collect());
    let mut levels: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in recs.iter().filter(|r| r.level.is_some()) {
        levels.entry(r.level.expect("level")).or_default().push(r.value);
    }
    Ok((overall, levels.into_iter().map(|(l, v)| (l, mean(v))).collect()))
}

fn clka_ordering(desk: &Desk) -> Verdict {
    let (p, pl) = clka_means(desk, "prealign")?;
    let (j, jl) = clka_means(desk, "joint")?;
    let gaps: BTreeMap<usize, f64> = pl.iter().map(|(l, v)| (*l, v - jl.get(l).copied().unwrap_or(0.0))).collect();
    let top = *gaps.keys().max().expect("levels");
    let widest_at_top = gaps.values().all(|g| *g <= gaps[&top]);
    let gap_text: Vec<String> = gaps.iter().map(|(l, g)| format!("{l}:{:+.2}", g)).collect();
    Ok((
        (j - 0.25).abs() <= 0.10 && p >= j + 0.10 && widest_at_top,
        format!("clone accuracy joint {j:.3} (0.25 +/- 0.10), prealign {p:.3} (>= joint + 0.10); gap per level {}", gap_text.join(" ")),
    ))
}

fn leak_ratio(desk: &Desk) -> Verdict {
    let io = pipeline::gen_leak(desk.cfg("prealign"), None)?.1;
    let va = pipeline::gen_leak(desk.cfg("vanilla"), None)?.1;
    Ok((
        io.samples >= 5000 && va.ratio >= 10.0 * io.ratio && io.ratio < 0.005,
        format!(
            "leak vanilla {:.4} vs input-only {:.4} over {} samples (>= 10x, input-only < 0.005)",
            va.ratio, io.ratio, io.samples
        ),
    ))
}

fn beta_sweep(desk: &Desk) -> Verdict {
    let b25 = clone_ppl(desk, "beta25", None)?;
    let joint = clone_ppl(desk, "joint", None)?;
    let joint_split = clone_ppl(desk, "joint", Some("beta25"))?;
    let unseen = |r: &pipeline::PplReport| r.clone_unseen.as_ref().map_or(f64::NAN, |p| p.ppl);
    let sweep: Vec<f64> = ["beta25", "beta50", "beta75", "prealign"]
        .iter()
        .map(|n| clone_ppl(desk, n, None).map(|r| r.clone.ppl))
        .collect::<Result<_>>()?;
    let monotone = sweep.windows(2).all(|w| w[1] <= w[0] * 1.02);
    let pass = b25.clone.ppl < joint.clone.ppl && unseen(&b25) < unseen(&joint_split) && monotone;
    let s: Vec<String> = sweep.iter().map(|v| format!("{v:.2}")).collect();
    Ok((
        pass,
        format!(
            "beta 0.25 clone ppl {:.2} vs joint {:.2}; unseen {:.2} vs joint {:.2}; ppl over beta 0.25..1.0 [{}] (non-increasing within 2%)",
            b25.clone.ppl,
            joint.clone.ppl,
            unseen(&b25),
            unseen(&joint_split),
            s.join(", ")
        ),
    ))
}

// ---------------------------------------------------------------- harness

fn report(id: u32, name: &str, t: Instant, v: Verdict, failures: &mut u32) {
    let secs = t.elapsed().as_secs_f64();
    match v {
        Ok((true, d)) => println!("PASS {id:>2} {name}: {d} [{secs:.1}s]"),
        Ok((false, d)) => {
            *failures += 1;
            println!("FAIL {id:>2} {name}: {d} [{secs:.1}s]")
        }
        Err(e) => {
            *failures += 1;
            println!("FAIL {id:>2} {name}: error: {e} [{secs:.1}s]")
        }
    }
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: u32| selected.is_empty() || selected.contains(&id);
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&root).expect("acceptance dir");
    let mut failures = 0;

    let quick: [Criterion<fn() -> Verdict>; 5] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "codeswitch oracle equivalence", codeswitch_oracle),
        (3, "contrastive analytics", contrastive_analytics),
        (4, "perfect-init equivalence", perfect_init_equivalence),
        (10, "probe statistics", probe_statistics),
    ];
    for (id, name, f) in quick {
        if want(id) {
            let t = Instant::now();
            report(id, name, t, f(), &mut failures);
        }
    }
    if want(11) {
        let t = Instant::now();
        report(11, "reproducibility", t, reproducibility(&root), &mut failures);
    }

    let desk_ids = [5, 6, 7, 8, 9];
    if desk_ids.iter().any(|&i| want(i)) {
        let t = Instant::now();
        match desk_runs(&root) {
            Ok(desk) => {
                eprintln!("  desk runs under {} took {:.0}s", desk.root.display(), t.elapsed().as_secs_f64());
                let checks: [Criterion<DeskCheck>; 5] = [
                    (5, "stage-1 alignment", stage1_alignment),
                    (6, "LM ordering", lm_ordering),
                    (7, "knowledge-probe ordering", clka_ordering),
                    (8, "leak ratio", leak_ratio),
                    (9, "alignment-fraction sweep", beta_sweep),
                ];
                for (id, name, f) in checks {
                    if want(id) {
                        let t = Instant::now();
                        report(id, name, t, f(&desk), &mut failures);
                    }
                }
            }
            Err(e) => {
                for id in desk_ids.into_iter().filter(|&i| want(i)) {
                    failures += 1;
                    println!("FAIL {id:>2} desk runs: error: {e}");
                }
            }
        }
    }

    println!("acceptance: {failures} criteria failed");
    if failures > 0 {
        std::process::exit(1);
    }
}
