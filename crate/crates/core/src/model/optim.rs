//! AdamW with bias correction, global-norm clipping, and a cosine schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::graph::{Grads, ParamSet};
use crate::model::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.01, grad_clip: 1.0 }
    }
}

/// Cosine decay from `max` at step 0 to `min` at step `total`, with an
/// optional linear warmup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub max: f64,
    pub min: f64,
    pub warmup: u64,
    pub total: u64,
}

impl CosineSchedule {
    pub fn new(max: f64, min: f64, total: u64) -> Self {
        Self { max, min, warmup: 0, total }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if self.warmup > 0 && step < self.warmup {
            return self.max * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let t = (step.saturating_sub(self.warmup)).min(span) as f64 / span as f64;
        self.min + 0.5 * (self.max - self.min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }

    /// One AdamW update. Weight decay is skipped for row vectors
    /// (biases and layer-norm parameters).
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &Grads<T>, lr: f64, cfg: &AdamConfig) -> Result<()> {
        for (id, g) in grads.iter() {
            if !g.all_finite() {
                return Err(Error::numerical(format!("non-finite gradient in tensor {}", params.name(id))));
            }
            if g.shape() != params.get(id).shape() {
                return Err(Error::data(format!("gradient shape mismatch for {}", params.name(id))));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
        let lr_t = T::from_f64_lossy(lr);
        let eps = T::from_f64_lossy(cfg.eps);
        for (id, g) in grads.iter() {
            let p = params.get_mut(id);
            let decay = if p.rows() > 1 { T::from_f64_lossy(1.0 - lr * cfg.weight_decay) } else { one };
            let (m, v) = (self.m[id].data_mut(), self.v[id].data_mut());
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w * decay - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales gradients down to `max_norm` when their global norm exceeds it.
/// Returns the pre-clip norm.
pub fn clip_grad_norm<T: Float>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(T::from_f64_lossy(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph::Graph;

    fn grads_of(params: &ParamSet<f64>, value: f64) -> Grads<f64> {
        let mut g = Grads::zeros_like(params);
        for (_, t) in g.iter_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = value);
        }
        g
    }

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::filled(3, 2, 0.5f64));
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { weight_decay: 0.0, eps: 1e-12, ..Default::default() };
        let g = grads_of(&p, 1.0);
        st.update(&mut p, &g, 1e-3, &cfg).unwrap();
        for &w in p.get(0).data() {
            assert!((w - (0.5 - 1e-3)).abs() < 1e-12);
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::filled(2, 2, 0.25f64));
        let before = p.clone();
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        let g = grads_of(&p, 0.0);
        st.update(&mut p, &g, 1e-3, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut p = ParamSet::new();
        p.push("blocks.0.attn.w_qkv", Tensor::filled(2, 2, 0.0f64));
        let mut st = AdamState::new(&p);
        let g = grads_of(&p, f64::NAN);
        let err = st.update(&mut p, &g, 1e-3, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("blocks.0.attn.w_qkv"));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn cosine_endpoints() {
        let s = CosineSchedule::new(3e-4, 3e-5, 1000);
        assert!((s.lr(0) - 3e-4).abs() < 1e-15);
        assert!((s.lr(1000) - 3e-5).abs() < 1e-15);
        assert!((s.lr(500) - 1.65e-4).abs() < 1e-12);
        assert!(s.lr(2000) >= 3e-5 - 1e-15);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut p = ParamSet::new();
        p.push("x", Tensor::scalar(3.0f64));
        let mut g = Graph::new(&p);
        let x = g.param(0);
        let y = g.mul(x, x);
        let mut grads = g.backward(y);
        let pre = clip_grad_norm(&mut grads, 1.0);
        assert!((pre - 6.0).abs() < 1e-12);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }
}
