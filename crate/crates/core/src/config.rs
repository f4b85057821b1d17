//! Run configuration: a sectioned `key = value` file (TOML syntax) layered
//! over built-in defaults, then `section.key=value` overrides.
//!
//! Unknown keys and type mismatches are usage errors that name the key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::corpus::knowledge::KnowledgeConfig;
use crate::corpus::natural::NaturalConfig;
use crate::corpus::schedule::Mix;
use crate::error::{Error, Result};
use crate::eval::ZsCltConfig;
use crate::model::{AdamConfig, ModelConfig};
use crate::prealign::PreAlignConfig;
use crate::pretrain::RunConfig;
use crate::rng::child_seed;
use crate::tokenizer::TokenizerConfig;

/// Environment variable naming the default directory for runs and data.
pub const RUN_ROOT_ENV: &str = "PREALIGN_RUN_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub name: String,
    /// Parent of the default data and run directories; empty means the
    /// environment variable, then `runs`.
    pub root: String,
    /// Empty means `<root>/data`.
    pub data_dir: String,
    /// Empty means `<root>/<name>`.
    pub run_dir: String,
    pub marker: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            name: "default".into(),
            root: String::new(),
            data_dir: String::new(),
            run_dir: String::new(),
            marker: crate::corpus::DEFAULT_MARKER.into(),
        }
    }
}

/// How the generated documents are divided. Base training documents are
/// whatever remains after the clone and held-out shares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Documents rendered in the clone language for the clone stream.
    pub clone_docs: usize,
    /// Held-out documents, scored in both languages.
    pub eval_docs: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { clone_docs: 1000, eval_docs: 300 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClonePool {
    /// The dedicated clone split.
    Clone,
    /// Base training documents rendered in the clone language.
    Base,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps_per_period: u64,
    pub tokens_per_step: usize,
    /// Clone tokens per English token in the joint mix.
    pub token_ratio: f64,
    pub mix: Mix,
    pub clone_pool: ClonePool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { steps_per_period: 250, tokens_per_step: 20_000, token_ratio: 0.01, mix: Mix::Joint, clone_pool: ClonePool::Clone }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub context: usize,
    /// `0` means `4 * d_model`.
    pub d_ff: usize,
    pub tied_embeddings: bool,
    pub init_std: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            context: m.context,
            d_ff: m.d_ff,
            tied_embeddings: m.tied_embeddings,
            init_std: m.init_std,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            context: self.context,
            vocab_size,
            d_ff: self.d_ff,
            tied_embeddings: self.tied_embeddings,
            init_std: self.init_std,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// Random initialization, no stage 1.
    Random,
    /// Stage-1 contrastive alignment.
    Prealign,
    /// Clone embeddings copied from their base tokens.
    Perfect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub method: InitMethod,
    /// Share of the alignment table, by frequency, used in both stages.
    pub beta: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        Self { method: InitMethod::Prealign, beta: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Held-out documents scored at each evaluation.
    pub ppl_docs: usize,
    pub leak_samples: usize,
    pub leak_gen_len: usize,
    pub leak_temperature: f64,
    /// Tokens of each held-out document, `<s>` included, used as a prompt.
    pub leak_prompt_tokens: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { ppl_docs: 300, leak_samples: 5000, leak_gen_len: 16, leak_temperature: 1.0, leak_prompt_tokens: 8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub corpus: NaturalConfig,
    pub split: SplitSection,
    pub tokenizer: TokenizerConfig,
    pub knowledge: KnowledgeConfig,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub optim: AdamConfig,
    pub init: InitSection,
    pub prealign: PreAlignConfig,
    pub pretrain: RunConfig,
    pub eval: EvalSection,
    pub zsclt: ZsCltConfig,
}

/// Named seeds split from the root seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub corpus: u64,
    pub knowledge: u64,
    pub schedule: u64,
    pub model: u64,
    pub train: u64,
    pub eval: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.knowledge.validate()?;
        self.prealign.validate()?;
        self.pretrain.validate()?;
        if self.run.marker.is_empty() || self.run.marker.contains(char::is_whitespace) {
            return Err(Error::usage("run.marker must be a non-empty string without whitespace"));
        }
        if self.split.clone_docs + self.split.eval_docs >= self.corpus.docs {
            return Err(Error::usage("split.clone_docs + split.eval_docs must leave base documents in corpus.docs"));
        }
        if !(self.init.beta > 0.0 && self.init.beta <= 1.0) {
            return Err(Error::usage("init.beta must lie in (0, 1]"));
        }
        if self.schedule.steps_per_period == 0 || self.schedule.tokens_per_step == 0 {
            return Err(Error::usage("schedule.steps_per_period and schedule.tokens_per_step must be positive"));
        }
        self.model.model_config(1, 0).validate()
    }

    pub fn seeds(&self) -> Seeds {
        let r = self.run.seed;
        Seeds {
            root: r,
            corpus: child_seed(r, "corpus"),
            knowledge: child_seed(r, "knowledge"),
            schedule: child_seed(r, "schedule"),
            model: child_seed(r, "model"),
            train: child_seed(r, "train"),
            eval: child_seed(r, "eval"),
        }
    }

    pub fn paths(&self) -> Paths {
        let root = if !self.run.root.is_empty() {
            PathBuf::from(&self.run.root)
        } else {
            std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
        };
        let pick = |s: &str, default: PathBuf| if s.is_empty() { default } else { PathBuf::from(s) };
        Paths { data_dir: pick(&self.run.data_dir, root.join("data")), run_dir: pick(&self.run.run_dir, root.join(&self.run.name)) }
    }

    /// Stage-2 token budget.
    pub fn pretrain_tokens(&self) -> usize {
        self.knowledge.n_periods * self.schedule.steps_per_period as usize * self.schedule.tokens_per_step
    }

    /// Canonical text of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Parse `section.key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::usage(format!("override {s:?} is not of the form section.key=value"))),
    }
}

fn leaf_paths(t: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in t {
        let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(sub) => leaf_paths(sub, &p, out),
            _ => out.push(p),
        }
    }
}

fn suggestion(key: &str, known: &[String]) -> String {
    let last = |s: &str| s.rsplit('.').next().unwrap_or(s).to_string();
    let best = known
        .iter()
        .map(|k| (strsim::levenshtein(key, k).min(strsim::levenshtein(&last(key), &last(k))), k))
        .min();
    match best {
        Some((d, k)) if d <= 3 => format!("; did you mean {k:?}?"),
        _ => String::new(),
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Coerce `v` to the type of `default`, or explain why it cannot be.
fn conform(key: &str, v: Value, default: &Value) -> Result<Value> {
    match (default, v) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Array(d), Value::Array(items)) => {
            let items = match d.first() {
                Some(proto) => items.into_iter().map(|x| conform(key, x, proto)).collect::<Result<_>>()?,
                None => items,
            };
            Ok(Value::Array(items))
        }
        (d, v) if std::mem::discriminant(d) == std::mem::discriminant(&v) => Ok(v),
        (d, v) => Err(Error::usage(format!("{key}: expected {}, found {}", type_name(d), type_name(&v)))),
    }
}

/// Merge `src` into `dst`, checking every key against `defaults`.
fn merge(dst: &mut Table, src: Table, defaults: &Table, prefix: &str, known: &[String]) -> Result<()> {
    for (k, v) in src {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let Some(d) = defaults.get(&k) else {
            return Err(Error::usage(format!("unknown key {key:?}{}", suggestion(&key, known))));
        };
        match (d, v) {
            (Value::Table(dt), Value::Table(st)) => {
                let slot = dst.entry(k).or_insert_with(|| Value::Table(Table::new()));
                let Value::Table(slot) = slot else { unreachable!("defaults and merged share shape") };
                merge(slot, st, dt, &key, known)?;
            }
            (d, v) => {
                dst.insert(k, conform(&key, v, d)?);
            }
        }
    }
    Ok(())
}

fn parse_value(key: &str, raw: &str, default: &Value) -> Result<Value> {
    if let Value::String(_) = default {
        let unquoted = raw.strip_prefix('"').and_then(|r| r.strip_suffix('"')).unwrap_or(raw);
        return Ok(Value::String(unquoted.to_string()));
    }
    let parsed: Table =
        toml::from_str(&format!("v = {raw}")).map_err(|_| Error::usage(format!("{key}: cannot parse value {raw:?}")))?;
    conform(key, parsed["v"].clone(), default)
}

/// Resolve defaults, then the file, then `overrides`, in increasing
/// precedence. A missing file is a usage error.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Config> {
    let Value::Table(defaults) = Value::try_from(Config::default()).expect("defaults serialize") else {
        unreachable!("configuration is a table")
    };
    let mut known = Vec::new();
    leaf_paths(&defaults, "", &mut known);
    let mut merged = defaults.clone();
    if let Some(p) = path {
        let text = fs::read_to_string(p)
            .map_err(|e| Error::usage(format!("cannot read config file {}: {e}", p.display())))?;
        let file: Table = toml::from_str(&text).map_err(|e| Error::usage(format!("{}: {e}", p.display())))?;
        merge(&mut merged, file, &defaults, "", &known)?;
    }
    for (key, raw) in overrides {
        let parts: Vec<&str> = key.split('.').collect();
        let mut d = &defaults;
        let mut m = &mut merged;
        for (i, part) in parts.iter().enumerate() {
            let unknown = || Error::usage(format!("unknown key {key:?}{}", suggestion(key, &known)));
            let dv = d.get(*part).ok_or_else(unknown)?;
            if i + 1 == parts.len() {
                if let Value::Table(_) = dv {
                    return Err(Error::usage(format!("{key} is a section, not a key")));
                }
                m.insert(part.to_string(), parse_value(key, raw, dv)?);
            } else {
                let Value::Table(dt) = dv else { return Err(unknown()) };
                d = dt;
                let Some(Value::Table(mt)) = m.get_mut(*part) else { unreachable!("defaults and merged share shape") };
                m = mt;
            }
        }
    }
    let text = toml::to_string(&merged).expect("merged table serializes");
    let cfg: Config = toml::from_str(&text).map_err(|e| Error::usage(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
