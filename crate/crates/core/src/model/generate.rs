//! Incremental (KV-cached) inference for ancestral sampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::tensor::{Float, MatRef, Tensor};
use crate::model::transformer::Transformer;

fn layer_norm<T: Float>(x: &[T], g: &[T], b: &[T], out: &mut [T]) {
    let n = T::from_usize(x.len()).unwrap();
    let mu = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
    let rs = T::one() / (var + T::from_f64_lossy(1e-5)).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mu) * rs * g[i] + b[i];
    }
}

fn gelu<T: Float>(x: T) -> T {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

// y = x @ W + b for a single row
fn affine<T: Float>(x: &[T], w: &Tensor<T>, b: &Tensor<T>, out: &mut Vec<T>) {
    out.clear();
    out.extend_from_slice(b.data());
    let mut o = Tensor::from_vec(1, w.cols(), std::mem::take(out));
    crate::model::tensor::gemm(T::one(), MatRef::new(x, 1, x.len()), w.view(), T::one(), o.view_mut());
    *out = o.into_vec();
}

/// Key/value cache for one sequence.
pub struct IncrementalDecoder<'m, T: Float> {
    model: &'m Transformer<T>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<'m, T: Float> IncrementalDecoder<'m, T> {
    pub fn new(model: &'m Transformer<T>) -> Self {
        let l = model.n_layers();
        Self { model, keys: vec![Vec::new(); l], values: vec![Vec::new(); l], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feed one token; returns next-token logits.
    pub fn step(&mut self, token: u32) -> Result<Vec<T>> {
        let m = self.model;
        let cfg = &m.config;
        if self.len >= cfg.context {
            return Err(Error::data(format!("generation exceeds context length {}", cfg.context)));
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::data(format!("token id {token} outside vocabulary")));
        }
        let d = cfg.d_model;
        let heads = cfg.n_heads;
        let dk = d / heads;
        let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
        let p = &m.params;
        let lay = &m.layout;
        let mut x: Vec<T> = p
            .get(lay.tok_emb)
            .row(token as usize)
            .iter()
            .zip(p.get(lay.pos_emb).row(self.len))
            .map(|(&a, &b)| a + b)
            .collect();
        let mut h = vec![T::zero(); d];
        let mut buf = Vec::new();
        let pos = self.len;
        for (li, b) in lay.blocks.iter().enumerate() {
            layer_norm(&x, p.get(b.ln1_g).data(), p.get(b.ln1_b).data(), &mut h);
            affine(&h, p.get(b.w_qkv), p.get(b.b_qkv), &mut buf);
            self.keys[li].extend_from_slice(&buf[d..2 * d]);
            self.values[li].extend_from_slice(&buf[2 * d..3 * d]);
            let (ks, vs) = (&self.keys[li], &self.values[li]);
            let mut att = vec![T::zero(); d];
            let mut w = vec![T::zero(); pos + 1];
            for hd in 0..heads {
                let q = &buf[hd * dk..(hd + 1) * dk];
                let mut mx = T::neg_infinity();
                for (j, wj) in w.iter_mut().enumerate() {
                    let k = &ks[j * d + hd * dk..j * d + (hd + 1) * dk];
                    *wj = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    mx = mx.max(*wj);
                }
                let mut z = T::zero();
                for wj in w.iter_mut() {
                    *wj = (*wj - mx).exp();
                    z += *wj;
                }
                for (j, &wj) in w.iter().enumerate() {
                    let v = &vs[j * d + hd * dk..j * d + (hd + 1) * dk];
                    for (a, &vv) in att[hd * dk..(hd + 1) * dk].iter_mut().zip(v) {
                        *a += wj / z * vv;
                    }
                }
            }
            affine(&att, p.get(b.w_o), p.get(b.b_o), &mut buf);
            for (a, &o) in x.iter_mut().zip(&buf) {
                *a += o;
            }
            layer_norm(&x, p.get(b.ln2_g).data(), p.get(b.ln2_b).data(), &mut h);
            affine(&h, p.get(b.w_fc), p.get(b.b_fc), &mut buf);
            let f: Vec<T> = buf.iter().map(|&v| gelu(v)).collect();
            affine(&f, p.get(b.w_proj), p.get(b.b_proj), &mut buf);
            for (a, &o) in x.iter_mut().zip(&buf) {
                *a += o;
            }
        }
        layer_norm(&x, p.get(lay.lnf_g).data(), p.get(lay.lnf_b).data(), &mut h);
        let out = p.get(lay.out_emb);
        let mut logits = Tensor::zeros(1, out.rows());
        crate::model::tensor::gemm(T::one(), MatRef::new(&h, 1, d), out.view().t(), T::zero(), logits.view_mut());
        self.len += 1;
        Ok(logits.into_vec())
    }
}

/// Sampling controls.
#[derive(Clone, Debug, Default)]
pub struct SampleOptions {
    pub temperature: f64,
    /// Tokens whose logits are forced to negative infinity.
    pub banned: Option<Vec<bool>>,
}

/// Draw a token from logits; temperature at or below `1e-6` is greedy argmax.
pub fn pick_token<T: Float, R: Rng>(logits: &[T], opts: &SampleOptions, rng: &mut R) -> u32 {
    let allowed = |i: usize| opts.banned.as_ref().is_none_or(|b| !b[i]);
    if opts.temperature <= 1e-6 {
        let mut best = None;
        for (i, &l) in logits.iter().enumerate() {
            if !allowed(i) {
                continue;
            }
            let l = l.as_f64();
            if best.is_none_or(|(_, bl)| l > bl) {
                best = Some((i, l));
            }
        }
        return best.map_or(0, |(i, _)| i as u32);
    }
    let inv_t = 1.0 / opts.temperature;
    let mx = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .map(|(_, &l)| l.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if allowed(i) { ((l.as_f64() - mx) * inv_t).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i as u32;
        }
        u -= w;
    }
    last as u32
}

/// Ancestral sampling of `n_tokens` continuation tokens after `prompt`.
pub fn sample_generate<T: Float, R: Rng>(
    model: &Transformer<T>,
    prompt: &[u32],
    n_tokens: usize,
    opts: &SampleOptions,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::data("generation needs a non-empty prompt"));
    }
    if prompt.len() + n_tokens > model.config.context {
        return Err(Error::data(format!(
            "prompt of {} plus {} generated tokens exceeds context {}",
            prompt.len(),
            n_tokens,
            model.config.context
        )));
    }
    let mut dec = IncrementalDecoder::new(model);
    let mut logits = Vec::new();
    for &t in prompt {
        logits = dec.step(t)?;
    }
    let mut out = Vec::with_capacity(n_tokens);
    for i in 0..n_tokens {
        let t = pick_token(&logits, opts, rng);
        out.push(t);
        if i + 1 < n_tokens {
            logits = dec.step(t)?;
        }
    }
    Ok(out)
}
