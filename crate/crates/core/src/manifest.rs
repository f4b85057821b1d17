//! Run manifests: the resolved configuration, seeds, input digests, and
//! outputs of one command, written into the directory it produced.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, Seeds};
use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Resolved configuration as written by [`Config::to_toml`].
    pub config: String,
    pub seeds: Seeds,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

/// SHA-256 of a file, or of every file below a directory in path order.
pub fn digest_path(path: &Path) -> Result<InputDigest> {
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    let mut bytes = 0u64;
    let mut buf = vec![0u8; 1 << 16];
    for f in &files {
        if files.len() > 1 {
            h.update(f.strip_prefix(path).unwrap_or(f).to_string_lossy().as_bytes());
            h.update([0u8]);
        }
        let mut r = fs::File::open(f).at(f)?;
        loop {
            let n = r.read(&mut buf).at(f)?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
            bytes += n as u64;
        }
    }
    let sha256 = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(InputDigest { path: path.to_path_buf(), sha256, bytes })
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let meta = fs::metadata(path).at(path)?;
    if meta.is_dir() {
        for e in fs::read_dir(path).at(path)? {
            collect_files(&e.at(path)?.path(), out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

impl RunManifest {
    pub fn new(command: &str, cfg: &Config, inputs: &[&Path]) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: cfg.to_toml(),
            seeds: cfg.seeds(),
            inputs: inputs.iter().map(|p| digest_path(p)).collect::<Result<_>>()?,
            outputs: Vec::new(),
        })
    }

    pub fn path_in(dir: &Path, command: &str) -> PathBuf {
        dir.join(format!("manifest.{command}.json"))
    }

    /// Write into `dir` and return the manifest's path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).at(dir)?;
        let p = Self::path_in(dir, &self.command);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::data(e.to_string()))?;
        fs::write(&p, text + "\n").at(&p)?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: malformed manifest: {e}", path.display())))
    }
}
