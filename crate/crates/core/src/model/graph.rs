//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] borrows a [`ParamSet`] immutably, records every operation as a
//! node, and [`Graph::backward`] walks the tape in reverse to produce one
//! gradient per parameter. Coarse fused ops (layer norm, causal attention,
//! cross-entropy) keep the tape short.

use crate::error::{Error, Result};
use crate::model::tensor::{gemm, Float, MatMut, MatRef, Tensor};

const LN_EPS: f64 = 1e-5;

/// Named parameter tensors, addressed by dense index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Float> Default for ParamSet<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<T: Float> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Grads<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self { grads: params.tensors().iter().map(|t| Some(Tensor::zeros(t.rows(), t.cols()))).collect() }
    }

    pub fn get(&self, id: usize) -> Option<&Tensor<T>> {
        self.grads[id].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (i, g)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut Tensor<T>)> {
        self.grads.iter_mut().enumerate().filter_map(|(i, g)| g.as_mut().map(|g| (i, g)))
    }

    pub fn global_norm(&self) -> T {
        self.iter().map(|(_, g)| g.sq_norm()).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for (_, g) in self.iter_mut() {
            g.scale_assign(s);
        }
    }
}

enum Op<T> {
    Input,
    Param(usize),
    Gather { table: Var, ids: Vec<usize> },
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: T },
    Sum { parts: Vec<Var> },
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, rstd: Vec<T> },
    Gelu { x: Var },
    Attention { qkv: Var, seqs: Vec<(usize, usize)>, heads: usize, probs: Vec<T> },
    // Stores d(loss)/d(logits) computed during the forward pass.
    CrossEntropy { logits: Var, dlogits: Tensor<T> },
    MeanRows { x: Var, ranges: Vec<(usize, usize)> },
    NormalizeRows { x: Var, inv_norms: Vec<T> },
    MaskDiagonal { x: Var },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording tape bound to a parameter set.
pub struct Graph<'p, T: Float> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

fn gelu_parts<T: Float>(x: T) -> (T, T) {
    // tanh approximation: returns (gelu(x), d gelu / dx)
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let one = T::one();
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (one + t);
    let dinner = c * (one + three * k * x * x);
    let dy = half * (one + t) + half * x * (one - t * t) * dinner;
    (y, dy)
}

impl<'p, T: Float> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("node value"),
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).item()
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let d = t.cols();
        let mut out = Tensor::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < t.rows(), "gather index {id} out of range {}", t.rows());
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        let rg = self.rg(table);
        self.push(out, Op::Gather { table, ids: ids.to_vec() }, rg)
    }

    /// `a @ b`, or `a @ b^T` when `trans_b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let bm = if trans_b { bv.view().t() } else { bv.view() };
        let mut out = Tensor::zeros(av.rows(), bm.cols);
        gemm(T::one(), av.view(), bm, T::zero(), out.view_mut());
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul { a, b, trans_b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add { a, b }, rg)
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!(b.len(), out.cols(), "bias width");
        for r in 0..out.rows() {
            for (x, &y) in out.row_mut(r).iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(out, Op::AddRow { a, bias }, rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        let rg = self.rg(a);
        self.push(out, Op::Scale { a, s }, rg)
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut total = T::zero();
        for &p in parts {
            total += self.value(p).item();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::scalar(total), Op::Sum { parts: parts.to_vec() }, rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let eps = T::from_f64_lossy(LN_EPS);
        let dn = T::from_usize(d).unwrap();
        let mut out = Tensor::zeros(n, d);
        let mut mean = Vec::with_capacity(n);
        let mut rstd = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            for ((o, &v), (&gg, &bb)) in out.row_mut(r).iter_mut().zip(row).zip(g.iter().zip(b)) {
                *o = (v - mu) * rs * gg + bb;
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, mean, rstd }, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| gelu_parts(v).0);
        let rg = self.rg(x);
        self.push(out, Op::Gelu { x }, rg)
    }

    /// Multi-head causal self-attention over packed sequences.
    ///
    /// `qkv` is `N x 3d` (query, key, value column blocks); `seqs` lists the
    /// `(start_row, len)` of each independent sequence. Output is `N x d`.
    pub fn causal_attention(&mut self, qkv: Var, seqs: &[(usize, usize)], heads: usize) -> Var {
        let qv = self.value(qkv);
        let (n, w) = qv.shape();
        assert_eq!(w % 3, 0, "qkv width");
        let d = w / 3;
        assert_eq!(d % heads, 0, "heads divide width");
        let dk = d / heads;
        let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
        let mut out = Tensor::zeros(n, d);
        let total: usize = seqs.iter().map(|&(_, l)| heads * l * l).sum();
        let mut probs = vec![T::zero(); total];
        let mut off = 0;
        for &(start, len) in seqs {
            assert!(start + len <= n, "sequence range");
            for h in 0..heads {
                let p = &mut probs[off..off + len * len];
                off += len * len;
                let q = MatRef::block(qv.data(), w, start, len, h * dk, dk);
                let k = MatRef::block(qv.data(), w, start, len, d + h * dk, dk);
                gemm(scale, q, k.t(), T::zero(), MatMut::new(p, len, len));
                for i in 0..len {
                    let row = &mut p[i * len..(i + 1) * len];
                    let m = row[..=i].iter().copied().fold(T::neg_infinity(), T::max);
                    let mut z = T::zero();
                    for v in &mut row[..=i] {
                        *v = (*v - m).exp();
                        z += *v;
                    }
                    for v in &mut row[..=i] {
                        *v /= z;
                    }
                    for v in &mut row[i + 1..] {
                        *v = T::zero();
                    }
                }
                let v = MatRef::block(qv.data(), w, start, len, 2 * d + h * dk, dk);
                gemm(
                    T::one(),
                    MatRef::new(p, len, len),
                    v,
                    T::zero(),
                    MatMut::block(out.data_mut(), d, start, len, h * dk, dk),
                );
            }
        }
        let rg = self.rg(qkv);
        self.push(out, Op::Attention { qkv, seqs: seqs.to_vec(), heads, probs }, rg)
    }

    /// Weighted sum over rows of `-log softmax(logits)[target]`.
    ///
    /// Rows with weight zero are ignored. Use weights `1/count` for a mean.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Var {
        let lv = self.value(logits);
        let (n, v) = lv.shape();
        assert_eq!(targets.len(), n, "targets length");
        assert_eq!(weights.len(), n, "weights length");
        let mut dl = Tensor::zeros(n, v);
        let mut loss = T::zero();
        for r in 0..n {
            let w = weights[r];
            if w == T::zero() {
                continue;
            }
            let row = lv.row(r);
            let t = targets[r];
            assert!(t < v, "target {t} out of range {v}");
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - m).exp()).sum();
            let lse = m + z.ln();
            loss += w * (lse - row[t]);
            let drow = dl.row_mut(r);
            for (dv, &x) in drow.iter_mut().zip(row) {
                *dv = w * (x - lse).exp();
            }
            drow[t] -= w;
        }
        let rg = self.rg(logits);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, dlogits: dl }, rg)
    }

    /// Mean of each `[start, end)` row range.
    pub fn mean_rows(&mut self, x: Var, ranges: &[(usize, usize)]) -> Var {
        let xv = self.value(x);
        let d = xv.cols();
        let mut out = Tensor::zeros(ranges.len(), d);
        for (g, &(s, e)) in ranges.iter().enumerate() {
            assert!(s < e && e <= xv.rows(), "mean_rows range");
            let inv = T::one() / T::from_usize(e - s).unwrap();
            let orow = out.row_mut(g);
            for r in s..e {
                for (o, &v) in orow.iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
            for o in orow {
                *o *= inv;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::MeanRows { x, ranges: ranges.to_vec() }, rg)
    }

    /// Rows scaled to unit L2 norm. Zero rows are an error.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut inv_norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let nrm = xv.row(r).iter().map(|&v| v * v).sum::<T>().sqrt();
            if nrm == T::zero() || !nrm.is_finite() {
                return Err(Error::numerical(format!("row {r} has zero or non-finite norm; cosine undefined")));
            }
            let inv = T::one() / nrm;
            for v in out.row_mut(r) {
                *v *= inv;
            }
            inv_norms.push(inv);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::NormalizeRows { x, inv_norms }, rg))
    }

    /// Square matrix with its diagonal replaced by negative infinity.
    pub fn mask_diagonal(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(out.rows(), out.cols(), "mask_diagonal needs a square matrix");
        for i in 0..out.rows() {
            out.set(i, i, T::neg_infinity());
        }
        let rg = self.rg(x);
        self.push(out, Op::MaskDiagonal { x }, rg)
    }

    /// Reverse sweep from a scalar `loss`; returns gradients for every
    /// parameter reachable from it.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Grads { grads: (0..self.params.len()).map(|_| None).collect() };
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => accumulate(&mut out.grads[*id], g),
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (a, &b) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let mut ga = Tensor::zeros(av.rows(), av.cols());
                        let bm = if *trans_b { bv.view() } else { bv.view().t() };
                        gemm(T::one(), g.view(), bm, T::zero(), ga.view_mut());
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.rg(*b) {
                        let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                        if *trans_b {
                            gemm(T::one(), g.view().t(), av.view(), T::zero(), gb.view_mut());
                        } else {
                            gemm(T::one(), av.view().t(), g.view(), T::zero(), gb.view_mut());
                        }
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Add { a, b } => {
                    if self.rg(*a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::AddRow { a, bias } => {
                    if self.rg(*bias) {
                        let mut gb = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (x, &y) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                        let bshape = self.value(*bias).shape();
                        accumulate(&mut grads[bias.0], Tensor::from_vec(bshape.0, bshape.1, gb.into_vec()));
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                        accumulate(&mut grads[a.0], Tensor::from_vec(g.rows(), g.cols(), d));
                    }
                    if self.rg(*b) {
                        let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                        accumulate(&mut grads[b.0], Tensor::from_vec(g.rows(), g.cols(), d));
                    }
                }
                Op::Scale { a, s } => {
                    let mut ga = g;
                    ga.scale_assign(*s);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sum { parts } => {
                    for p in parts {
                        if self.rg(*p) {
                            accumulate(&mut grads[p.0], g.clone());
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                    let xv = self.value(*x);
                    let gm = self.value(*gamma).data();
                    let (n, d) = xv.shape();
                    let dn = T::from_usize(d).unwrap();
                    let mut dg = vec![T::zero(); d];
                    let mut db = vec![T::zero(); d];
                    let mut dx = Tensor::zeros(n, d);
                    let mut xhat = vec![T::zero(); d];
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..n {
                        let (mu, rs) = (mean[r], rstd[r]);
                        let gr = g.row(r);
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for c in 0..d {
                            xhat[c] = (xv.get(r, c) - mu) * rs;
                            dg[c] += gr[c] * xhat[c];
                            db[c] += gr[c];
                            dxhat[c] = gr[c] * gm[c];
                            s1 += dxhat[c];
                            s2 += dxhat[c] * xhat[c];
                        }
                        let (m1, m2) = (s1 / dn, s2 / dn);
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = rs * (dxhat[c] - m1 - xhat[c] * m2);
                        }
                    }
                    let gshape = self.value(*gamma).shape();
                    if self.rg(*gamma) {
                        accumulate(&mut grads[gamma.0], Tensor::from_vec(gshape.0, gshape.1, dg));
                    }
                    if self.rg(*beta) {
                        accumulate(&mut grads[beta.0], Tensor::from_vec(gshape.0, gshape.1, db));
                    }
                    if self.rg(*x) {
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Gelu { x } => {
                    let xv = self.value(*x);
                    let d = g.data().iter().zip(xv.data()).map(|(&gg, &v)| gg * gelu_parts(v).1).collect();
                    accumulate(&mut grads[x.0], Tensor::from_vec(g.rows(), g.cols(), d));
                }
                Op::Attention { qkv, seqs, heads, probs } => {
                    let qv = self.value(*qkv);
                    let (n, w) = qv.shape();
                    let d = w / 3;
                    let dk = d / heads;
                    let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
                    let mut dqkv = Tensor::zeros(n, w);
                    let mut off = 0;
                    let mut dp = Vec::new();
                    for &(start, len) in seqs {
                        dp.resize(len * len, T::zero());
                        for h in 0..*heads {
                            let p = &probs[off..off + len * len];
                            off += len * len;
                            let q = MatRef::block(qv.data(), w, start, len, h * dk, dk);
                            let k = MatRef::block(qv.data(), w, start, len, d + h * dk, dk);
                            let v = MatRef::block(qv.data(), w, start, len, 2 * d + h * dk, dk);
                            let go = MatRef::block(g.data(), d, start, len, h * dk, dk);
                            // dV = P^T dO
                            gemm(
                                T::one(),
                                MatRef::new(p, len, len).t(),
                                go,
                                T::zero(),
                                MatMut::block(dqkv.data_mut(), w, start, len, 2 * d + h * dk, dk),
                            );
                            // dP = dO V^T
                            gemm(T::one(), go, v.t(), T::zero(), MatMut::new(&mut dp, len, len));
                            // dS = P * (dP - rowsum(dP * P))
                            for i in 0..len {
                                let pr = &p[i * len..(i + 1) * len];
                                let dr = &mut dp[i * len..(i + 1) * len];
                                let dot: T = pr[..=i].iter().zip(&dr[..=i]).map(|(&a, &b)| a * b).sum();
                                for j in 0..len {
                                    dr[j] = if j <= i { pr[j] * (dr[j] - dot) } else { T::zero() };
                                }
                            }
                            let ds = MatRef::new(&dp, len, len);
                            gemm(
                                scale,
                                ds,
                                k,
                                T::zero(),
                                MatMut::block(dqkv.data_mut(), w, start, len, h * dk, dk),
                            );
                            gemm(
                                scale,
                                ds.t(),
                                q,
                                T::zero(),
                                MatMut::block(dqkv.data_mut(), w, start, len, d + h * dk, dk),
                            );
                        }
                    }
                    accumulate(&mut grads[qkv.0], dqkv);
                }
                Op::CrossEntropy { logits, dlogits } => {
                    let mut gl = dlogits.clone();
                    gl.scale_assign(g.item());
                    accumulate(&mut grads[logits.0], gl);
                }
                Op::MeanRows { x, ranges } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (gi, &(s, e)) in ranges.iter().enumerate() {
                        let inv = T::one() / T::from_usize(e - s).unwrap();
                        for r in s..e {
                            for (a, &b) in gx.row_mut(r).iter_mut().zip(g.row(gi)) {
                                *a += b * inv;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::NormalizeRows { x, inv_norms } => {
                    // y = x / |x|  =>  dx = (g - y (g . y)) / |x|
                    let y = node.value.as_ref().unwrap();
                    let mut gx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yy), &gg) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = (gg - yy * dot) * inv_norms[r];
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::MaskDiagonal { x } => {
                    let mut gx = g;
                    for i in 0..gx.rows() {
                        gx.set(i, i, T::zero());
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
        }
        out
    }
}

fn accumulate<T: Float>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
