//! Append-only JSONL metric stream.
//!
//! One record per line: `{"step":..,"metric":..,"split":..,"value":..}` plus
//! an optional `"level"` (knowledge frequency level). Steps never decrease.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub metric: String,
    pub split: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
}

impl MetricRecord {
    pub fn new(step: u64, metric: &str, split: &str, value: f64) -> Self {
        Self { step, metric: metric.into(), split: split.into(), value, level: None }
    }

    pub fn with_level(mut self, level: usize) -> Self {
        self.level = Some(level);
        self
    }
}

pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    bytes: u64,
    last_step: u64,
}

impl MetricsWriter {
    /// Start a fresh stream, replacing any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).at(dir)?;
        }
        let file = File::create(path).at(path)?;
        Ok(Self { path: path.into(), file, bytes: 0, last_step: 0 })
    }

    /// Reopen a stream for appending after truncating it to `len` bytes,
    /// the length recorded alongside a checkpoint.
    pub fn resume(path: &Path, len: u64) -> Result<Self> {
        let file = OpenOptions::new().read(true).write(true).open(path).at(path)?;
        let actual = file.metadata().at(path)?.len();
        if actual < len {
            return Err(Error::data(format!(
                "{}: metrics stream has {actual} bytes, checkpoint expects at least {len}",
                path.display()
            )));
        }
        file.set_len(len).at(path)?;
        let last_step = read_metrics(path)?.last().map_or(0, |r| r.step);
        let file = OpenOptions::new().append(true).open(path).at(path)?;
        Ok(Self { path: path.into(), file, bytes: len, last_step })
    }

    pub fn write(&mut self, rec: &MetricRecord) -> Result<()> {
        if rec.step < self.last_step {
            return Err(Error::data(format!("metric step {} precedes {}", rec.step, self.last_step)));
        }
        if !rec.value.is_finite() {
            return Err(Error::numerical(format!("metric {} at step {} is not finite", rec.metric, rec.step)));
        }
        let mut line = serde_json::to_string(rec).map_err(|e| Error::data(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).at(&self.path)?;
        self.bytes += line.len() as u64;
        self.last_step = rec.step;
        Ok(())
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().at(&self.path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let f = File::open(path).at(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{}:{}: malformed metric record: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
