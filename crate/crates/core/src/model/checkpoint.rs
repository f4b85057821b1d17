//! Checkpoint directories: a JSON manifest plus a little-endian f32 blob.
//!
//! ```text
//! <dir>/manifest.json   format tag, version, model config, step, seed,
//!                       named-tensor index, free-form `extra`
//! <dir>/tensors.bin     parameters, then Adam first moments, then second moments
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::model::graph::ParamSet;
use crate::model::optim::AdamState;
use crate::model::tensor::Tensor;
use crate::model::transformer::{ModelConfig, Transformer};

pub const FORMAT: &str = "prealign-checkpoint";
pub const VERSION: u32 = 1;

/// Everything needed to resume training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub model: Transformer<f32>,
    pub optim: AdamState<f32>,
    /// Training steps completed in the current stage.
    pub step: u64,
    /// Root seed from which every random stream is derived.
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: ModelConfig,
    step: u64,
    seed: u64,
    optimizer_step: u64,
    tensors: Vec<TensorEntry>,
    total_floats: usize,
    #[serde(default)]
    extra: serde_json::Value,
}

impl ModelState {
    pub fn new(model: Transformer<f32>, seed: u64) -> Self {
        let optim = AdamState::new(&model.params);
        Self { model, optim, step: 0, seed }
    }

    pub fn all_finite(&self) -> bool {
        self.model.all_finite()
    }

    pub fn save(&self, dir: &Path, extra: &serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let params = &self.model.params;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, t: &Tensor<f32>, offset: &mut usize| {
            tensors.push(TensorEntry { name, rows: t.rows(), cols: t.cols(), offset: *offset });
            *offset += t.len();
        };
        for (id, t) in params.tensors().iter().enumerate() {
            push(params.name(id).to_string(), t, &mut offset);
        }
        for (id, t) in self.optim.m.iter().enumerate() {
            push(format!("adam.m.{}", params.name(id)), t, &mut offset);
        }
        for (id, t) in self.optim.v.iter().enumerate() {
            push(format!("adam.v.{}", params.name(id)), t, &mut offset);
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            config: self.model.config.clone(),
            step: self.step,
            seed: self.seed,
            optimizer_step: self.optim.step,
            tensors,
            total_floats: offset,
            extra: extra.clone(),
        };
        let blob_path = dir.join("tensors.bin");
        let file = fs::File::create(&blob_path).at(&blob_path)?;
        let mut w = BufWriter::new(file);
        for t in params.tensors().iter().chain(&self.optim.m).chain(&self.optim.v) {
            for &x in t.data() {
                w.write_all(&x.to_le_bytes()).at(&blob_path)?;
            }
        }
        w.flush().at(&blob_path)?;
        let mpath = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::data(e.to_string()))?;
        fs::write(&mpath, text).at(&mpath)?;
        Ok(())
    }

    /// The manifest's `extra` field, without reading the tensors.
    pub fn read_extra(dir: &Path) -> Result<serde_json::Value> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).at(&mpath)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: malformed checkpoint manifest: {e}", mpath.display())))?;
        Ok(manifest.extra)
    }

    /// Load a checkpoint; returns the state and the manifest's `extra` field.
    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).at(&mpath)?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: malformed checkpoint manifest: {e}", mpath.display())))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::data(format!(
                "{}: unsupported checkpoint format {} v{}",
                mpath.display(),
                manifest.format,
                manifest.version
            )));
        }
        let blob_path = dir.join("tensors.bin");
        let mut bytes = Vec::new();
        fs::File::open(&blob_path).at(&blob_path)?.read_to_end(&mut bytes).at(&blob_path)?;
        if bytes.len() != manifest.total_floats * 4 {
            return Err(Error::data(format!(
                "{}: expected {} bytes, found {}",
                blob_path.display(),
                manifest.total_floats * 4,
                bytes.len()
            )));
        }
        let read = |e: &TensorEntry| -> Result<Tensor<f32>> {
            let end = e.offset + e.rows * e.cols;
            if end > manifest.total_floats {
                return Err(Error::data(format!("tensor {} extends past blob end", e.name)));
            }
            let data = bytes[e.offset * 4..end * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(Tensor::from_vec(e.rows, e.cols, data))
        };
        let template = Transformer::<f32>::new(ModelConfig { seed: 0, ..manifest.config.clone() })?;
        let n = template.params.len();
        if manifest.tensors.len() != 3 * n {
            return Err(Error::data(format!(
                "checkpoint lists {} tensors, configuration needs {}",
                manifest.tensors.len(),
                3 * n
            )));
        }
        let mut params = ParamSet::new();
        for e in &manifest.tensors[..n] {
            params.push(e.name.clone(), read(e)?);
        }
        let model = Transformer::from_params(manifest.config.clone(), params)?;
        let m = manifest.tensors[n..2 * n].iter().map(read).collect::<Result<Vec<_>>>()?;
        let v = manifest.tensors[2 * n..].iter().map(read).collect::<Result<Vec<_>>>()?;
        for (id, t) in model.params.tensors().iter().enumerate() {
            if m[id].shape() != t.shape() || v[id].shape() != t.shape() {
                return Err(Error::data(format!("optimizer moment shape mismatch for {}", model.params.name(id))));
            }
        }
        let optim = AdamState { step: manifest.optimizer_step, m, v };
        Ok((Self { model, optim, step: manifest.step, seed: manifest.seed }, manifest.extra))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph::Grads;
    use crate::model::optim::AdamConfig;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Transformer::<f32>::new(ModelConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            context: 6,
            vocab_size: 12,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let mut st = ModelState::new(model, 42);
        let mut grads = Grads::zeros_like(&st.model.params);
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = (i as f32 * 0.37).sin());
        }
        st.optim.update(&mut st.model.params, &grads, 1e-3, &AdamConfig::default()).unwrap();
        st.step = 7;
        let dir = tempfile::tempdir().unwrap();
        st.save(dir.path(), &serde_json::json!({"metrics_len": 10})).unwrap();
        let (back, extra) = ModelState::load(dir.path()).unwrap();
        assert_eq!(back, st);
        assert_eq!(extra["metrics_len"], 10);
        let seq = [1u32, 2, 3, 4];
        assert_eq!(back.model.logits(&seq).unwrap(), st.model.logits(&seq).unwrap());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let model = Transformer::<f32>::new(ModelConfig {
            n_layers: 1,
            d_model: 4,
            n_heads: 1,
            context: 4,
            vocab_size: 5,
            ..Default::default()
        })
        .unwrap();
        let st = ModelState::new(model, 0);
        let dir = tempfile::tempdir().unwrap();
        st.save(dir.path(), &serde_json::Value::Null).unwrap();
        let blob = dir.path().join("tensors.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        let err = ModelState::load(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
