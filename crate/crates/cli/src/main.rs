use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prealign::codeswitch::CodeswitchMode;
use prealign::config::{load_config, parse_override, Config};
use prealign::pipeline::{self, Baseline, Figure, PretrainOptions};
use prealign::Result;

#[derive(Parser)]
#[command(name = "prealign", version, about = "Pre-alignment and pretraining workbench over a synthetic cloned language")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (sectioned key = value).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set pretrain.lr=0.001`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Derive a baseline configuration: only_tgt, full_tgt, or joint.
    #[arg(long)]
    baseline: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint directory; defaults to the run's latest checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the natural corpus, its clone split, and the transfer task.
    SynthClone(Common),
    /// Generate knowledge triplets and probe items.
    GenKnowledge(Common),
    /// Train the vocabulary and write the clone alignment table.
    BuildVocab(Common),
    /// Build the period schedule for a run.
    Schedule(Common),
    /// Build the stage-2 initialization (stage 1 when init.method = prealign).
    Prealign {
        #[command(flatten)]
        common: Common,
        /// random, prealign, or perfect.
        #[arg(long)]
        init: Option<String>,
        /// Share of the alignment table used for alignment.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Run stage 2.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// off, input_only, or vanilla.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        ratio: Option<f64>,
        /// Continue from the latest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many steps.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Held-out perplexity, with seen and unseen word splits.
    EvalPpl(EvalArgs),
    /// Knowledge probe accuracy over all items.
    EvalClka(EvalArgs),
    /// Zero-shot cross-lingual transfer on the category-agreement task.
    EvalZsclt(EvalArgs),
    /// Embedding cosine between aligned words.
    ProbeAlign(EvalArgs),
    /// Share of sampled continuations containing clone tokens.
    GenLeak(EvalArgs),
    /// Aggregate a run's metrics into a CSV table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directory; defaults to the configured one.
        #[arg(long)]
        run: Option<PathBuf>,
        /// clka, cosine, seen_unseen, or ppl.
        #[arg(long)]
        figure: String,
    },
}

fn resolve(c: &Common, extra: &[(String, String)]) -> Result<Config> {
    let mut overrides = c.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    let path = |p: &Path| p.to_string_lossy().into_owned();
    if let Some(s) = c.seed {
        overrides.push(("run.seed".into(), s.to_string()));
    }
    if let Some(p) = &c.data_dir {
        overrides.push(("run.data_dir".into(), path(p)));
    }
    if let Some(p) = &c.run_dir {
        overrides.push(("run.run_dir".into(), path(p)));
    }
    overrides.extend_from_slice(extra);
    let cfg = load_config(c.config.as_deref(), &overrides)?;
    match &c.baseline {
        Some(b) => Ok(pipeline::baseline_config(&cfg, b.parse::<Baseline>()?)),
        None => Ok(cfg),
    }
}

fn print_manifest(p: &Path) {
    println!("manifest: {}", p.display());
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("results serialize"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthClone(c) => print_manifest(&pipeline::synth_clone(&resolve(&c, &[])?)?),
        Command::GenKnowledge(c) => print_manifest(&pipeline::gen_knowledge(&resolve(&c, &[])?)?),
        Command::BuildVocab(c) => print_manifest(&pipeline::build_vocab(&resolve(&c, &[])?)?),
        Command::Schedule(c) => print_manifest(&pipeline::build_schedule(&resolve(&c, &[])?)?),
        Command::Prealign { common, init, beta } => {
            let mut extra = Vec::new();
            if let Some(m) = init {
                extra.push(("init.method".to_string(), m));
            }
            if let Some(b) = beta {
                extra.push(("init.beta".to_string(), b.to_string()));
            }
            print_manifest(&pipeline::prealign(&resolve(&common, &extra)?)?)
        }
        Command::Pretrain { common, mode, ratio, resume, stop_after } => {
            let mut extra = Vec::new();
            if let Some(m) = mode {
                extra.push(("pretrain.codeswitch_mode".to_string(), m.parse::<CodeswitchMode>()?.as_str().to_string()));
            }
            if let Some(r) = ratio {
                extra.push(("pretrain.codeswitch_ratio".to_string(), r.to_string()));
            }
            let cfg = resolve(&common, &extra)?;
            print_manifest(&pipeline::pretrain(&cfg, PretrainOptions { resume, stop_after })?)
        }
        Command::EvalPpl(a) => {
            let (m, r) = pipeline::eval_ppl(&resolve(&a.common, &[])?, a.checkpoint.as_deref())?;
            print_json(&r);
            print_manifest(&m)
        }
        Command::EvalClka(a) => {
            let (m, r) = pipeline::eval_clka(&resolve(&a.common, &[])?, a.checkpoint.as_deref())?;
            print_json(&r);
            print_manifest(&m)
        }
        Command::EvalZsclt(a) => {
            let (m, r) = pipeline::eval_zsclt(&resolve(&a.common, &[])?, a.checkpoint.as_deref())?;
            print_json(&r);
            print_manifest(&m)
        }
        Command::ProbeAlign(a) => {
            let (m, r) = pipeline::probe_align(&resolve(&a.common, &[])?, a.checkpoint.as_deref())?;
            print_json(&r);
            print_manifest(&m)
        }
        Command::GenLeak(a) => {
            let (m, r) = pipeline::gen_leak(&resolve(&a.common, &[])?, a.checkpoint.as_deref())?;
            print_json(&r);
            print_manifest(&m)
        }
        Command::Report { common, run, figure } => {
            let figure: Figure = figure.parse()?;
            let (m, out) = pipeline::report(&resolve(&common, &[])?, run.as_deref(), figure)?;
            println!("{}", out.display());
            print_manifest(&m)
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
