//! Pre-norm decoder-only transformer with learned positional embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::graph::{Graph, ParamSet, Var};
use crate::model::tensor::{Float, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub context: usize,
    pub vocab_size: usize,
    /// Hidden width of the MLP; `0` means `4 * d_model`.
    pub d_ff: usize,
    pub tied_embeddings: bool,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            context: 128,
            vocab_size: 0,
            d_ff: 0,
            tied_embeddings: false,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn ff_width(&self) -> usize {
        if self.d_ff == 0 {
            4 * self.d_model
        } else {
            self.d_ff
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::usage("model.n_layers must be at least 1"));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::usage(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.context < 2 {
            return Err(Error::usage("model.context must be at least 2"));
        }
        if self.vocab_size == 0 {
            return Err(Error::usage("model.vocab_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockIds {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

/// Parameter ids of every tensor in the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockIds>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    /// Equal to `tok_emb` when embeddings are tied.
    pub out_emb: usize,
}

/// Packed batch of independent sequences laid out row after row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Packed {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub seqs: Vec<(usize, usize)>,
}

impl Packed {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, seq: &[u32]) {
        let start = self.ids.len();
        self.ids.extend(seq.iter().map(|&t| t as usize));
        self.positions.extend(0..seq.len());
        self.seqs.push((start, seq.len()));
    }

    pub fn from_seqs<S: AsRef<[u32]>>(seqs: &[S]) -> Self {
        let mut p = Self::new();
        for s in seqs {
            p.push(s.as_ref());
        }
        p
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }
}

/// Graph handles produced by one forward pass.
pub struct Forward {
    /// Embedding output followed by each block's residual stream: `L + 1` entries.
    pub hidden: Vec<Var>,
    /// Final-layer-norm output.
    pub last: Var,
    pub logits: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transformer<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    pub layout: Layout,
}

impl<T: Float> Transformer<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = config.init_std;
        let normal = Normal::new(0.0, std).map_err(|e| Error::usage(e.to_string()))?;
        let resid = Normal::new(0.0, std / (2.0 * config.n_layers as f64).sqrt())
            .map_err(|e| Error::usage(e.to_string()))?;
        let mut draw = |rows: usize, cols: usize, dist: &Normal<f64>| {
            let data = (0..rows * cols).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect();
            Tensor::from_vec(rows, cols, data)
        };
        let (d, v, c, f) = (config.d_model, config.vocab_size, config.context, config.ff_width());
        let mut p = ParamSet::new();
        let tok_emb = p.push("tok_emb", draw(v, d, &normal));
        let pos_emb = p.push("pos_emb", draw(c, d, &normal));
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let n = |s: &str| format!("blocks.{l}.{s}");
            blocks.push(BlockIds {
                ln1_g: p.push(n("ln1.g"), Tensor::filled(1, d, T::one())),
                ln1_b: p.push(n("ln1.b"), Tensor::zeros(1, d)),
                w_qkv: p.push(n("attn.w_qkv"), draw(d, 3 * d, &normal)),
                b_qkv: p.push(n("attn.b_qkv"), Tensor::zeros(1, 3 * d)),
                w_o: p.push(n("attn.w_o"), draw(d, d, &resid)),
                b_o: p.push(n("attn.b_o"), Tensor::zeros(1, d)),
                ln2_g: p.push(n("ln2.g"), Tensor::filled(1, d, T::one())),
                ln2_b: p.push(n("ln2.b"), Tensor::zeros(1, d)),
                w_fc: p.push(n("mlp.w_fc"), draw(d, f, &normal)),
                b_fc: p.push(n("mlp.b_fc"), Tensor::zeros(1, f)),
                w_proj: p.push(n("mlp.w_proj"), draw(f, d, &resid)),
                b_proj: p.push(n("mlp.b_proj"), Tensor::zeros(1, d)),
            });
        }
        let lnf_g = p.push("ln_f.g", Tensor::filled(1, d, T::one()));
        let lnf_b = p.push("ln_f.b", Tensor::zeros(1, d));
        let out_emb = if config.tied_embeddings { tok_emb } else { p.push("out_emb", draw(v, d, &normal)) };
        let layout = Layout { tok_emb, pos_emb, blocks, lnf_g, lnf_b, out_emb };
        Ok(Self { config, params: p, layout })
    }

    /// Rebuild from stored parameters; shapes are validated against `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let template = Transformer::<T>::new(ModelConfig { seed: 0, ..config.clone() })?;
        if template.params.names() != params.names() {
            return Err(Error::data("parameter names do not match the model configuration"));
        }
        for (id, t) in template.params.tensors().iter().enumerate() {
            if t.shape() != params.get(id).shape() {
                return Err(Error::data(format!(
                    "parameter {} has shape {:?}, configuration expects {:?}",
                    params.name(id),
                    params.get(id).shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params, layout: template.layout })
    }

    pub fn cast<U: Float>(&self) -> Transformer<U> {
        Transformer { config: self.config.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn tok_emb(&self) -> &Tensor<T> {
        self.params.get(self.layout.tok_emb)
    }

    pub fn out_emb(&self) -> &Tensor<T> {
        self.params.get(self.layout.out_emb)
    }

    fn check_batch(&self, batch: &Packed) -> Result<()> {
        for &(_, len) in &batch.seqs {
            if len > self.config.context {
                return Err(Error::data(format!(
                    "sequence of {len} tokens exceeds context length {}",
                    self.config.context
                )));
            }
            if len == 0 {
                return Err(Error::data("empty sequence in batch"));
            }
        }
        if let Some(&bad) = batch.ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::data(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Causal forward pass over a packed batch.
    pub fn forward<'g>(&self, g: &mut Graph<'g, T>, batch: &Packed, with_logits: bool) -> Result<Forward> {
        self.check_batch(batch)?;
        let lay = &self.layout;
        let heads = self.config.n_heads;
        let tok = g.param(lay.tok_emb);
        let pos = g.param(lay.pos_emb);
        let te = g.gather(tok, &batch.ids);
        let pe = g.gather(pos, &batch.positions);
        let mut x = g.add(te, pe);
        let mut hidden = Vec::with_capacity(self.config.n_layers + 1);
        hidden.push(x);
        for b in &lay.blocks {
            let (g1, b1) = (g.param(b.ln1_g), g.param(b.ln1_b));
            let h = g.layer_norm(x, g1, b1);
            let w = g.param(b.w_qkv);
            let qkv = g.matmul(h, w, false);
            let bq = g.param(b.b_qkv);
            let qkv = g.add_row(qkv, bq);
            let a = g.causal_attention(qkv, &batch.seqs, heads);
            let wo = g.param(b.w_o);
            let o = g.matmul(a, wo, false);
            let bo = g.param(b.b_o);
            let o = g.add_row(o, bo);
            x = g.add(x, o);

            let (g2, b2) = (g.param(b.ln2_g), g.param(b.ln2_b));
            let h = g.layer_norm(x, g2, b2);
            let wf = g.param(b.w_fc);
            let f = g.matmul(h, wf, false);
            let bf = g.param(b.b_fc);
            let f = g.add_row(f, bf);
            let f = g.gelu(f);
            let wp = g.param(b.w_proj);
            let f = g.matmul(f, wp, false);
            let bp = g.param(b.b_proj);
            let f = g.add_row(f, bp);
            x = g.add(x, f);
            hidden.push(x);
        }
        let (gf, bf) = (g.param(lay.lnf_g), g.param(lay.lnf_b));
        let last = g.layer_norm(x, gf, bf);
        let logits = if with_logits {
            let out = g.param(lay.out_emb);
            Some(g.matmul(last, out, true))
        } else {
            None
        };
        Ok(Forward { hidden, last, logits })
    }

    /// Pooled per-layer word representations for a batch of words.
    ///
    /// Each word is run in isolation as `[bos, subwords..]`. Returns `L + 2`
    /// nodes, each `n_words x d`: input-embedding mean, the mean of every
    /// block's activations over the word's positions, and the output-embedding
    /// mean.
    pub fn encode_words<'g>(&self, g: &mut Graph<'g, T>, words: &[Vec<u32>], bos: u32) -> Result<Vec<Var>> {
        let mut batch = Packed::new();
        let mut pos_ranges = Vec::with_capacity(words.len());
        let mut flat = Vec::new();
        let mut flat_ranges = Vec::with_capacity(words.len());
        for w in words {
            if w.is_empty() {
                return Err(Error::data("cannot encode a word with no subwords"));
            }
            if w.len() + 1 > self.config.context {
                return Err(Error::data(format!("word of {} subwords exceeds context", w.len())));
            }
            let start = batch.rows();
            let mut seq = Vec::with_capacity(w.len() + 1);
            seq.push(bos);
            seq.extend_from_slice(w);
            batch.push(&seq);
            pos_ranges.push((start + 1, start + 1 + w.len()));
            let fs = flat.len();
            flat.extend(w.iter().map(|&t| t as usize));
            flat_ranges.push((fs, flat.len()));
        }
        let fwd = self.forward(g, &batch, false)?;
        let mut reps = Vec::with_capacity(self.config.n_layers + 2);
        let tok = g.param(self.layout.tok_emb);
        let rows = g.gather(tok, &flat);
        reps.push(g.mean_rows(rows, &flat_ranges));
        for &h in &fwd.hidden[1..] {
            reps.push(g.mean_rows(h, &pos_ranges));
        }
        let out = g.param(self.layout.out_emb);
        let rows = g.gather(out, &flat);
        reps.push(g.mean_rows(rows, &flat_ranges));
        Ok(reps)
    }

    /// Logits for a single sequence, without keeping the graph.
    pub fn logits(&self, seq: &[u32]) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let fwd = self.forward(&mut g, &Packed::from_seqs(&[seq]), true)?;
        Ok(g.value(fwd.logits.unwrap()).clone())
    }

    pub fn all_finite(&self) -> bool {
        self.params.tensors().iter().all(Tensor::all_finite)
    }
}

/// Row-wise log-softmax of a logits matrix.
pub fn log_softmax_rows<T: Float>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
        for x in row {
            *x -= lse;
        }
    }
    out
}

/// Masked mean next-token negative log-likelihood as a graph node.
pub fn loss_lm<'g, T: Float>(g: &mut Graph<'g, T>, logits: Var, targets: &[u32], mask: &[bool]) -> Result<Var> {
    let n = g.value(logits).rows();
    if targets.len() != n || mask.len() != n {
        return Err(Error::data(format!(
            "loss_lm: {} logit rows, {} targets, {} mask entries",
            n,
            targets.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::data("loss_lm: every position is masked"));
    }
    let w = T::one() / T::from_usize(count).unwrap();
    let weights: Vec<T> = mask.iter().map(|&m| if m { w } else { T::zero() }).collect();
    let t: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    Ok(g.cross_entropy(logits, &t, &weights))
}
