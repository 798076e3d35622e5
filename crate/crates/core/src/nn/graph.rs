//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation eagerly. Calling [`Graph::backward`]
//! on a scalar node walks the tape in reverse and returns gradients for all
//! parameters and tracked inputs that contributed to it.

use super::{Matrix, ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Tracked,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, groups: usize, heads: usize, causal: bool, probs: Vec<f64> },
    GatherRows(Var, Vec<usize>),
    GroupMean(Var, usize),
    RowDot(Var, Var),
    ConcatCols(Vec<Var>),
    SelectCol(Var, usize),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    GaussianLogProb { mean: Var, log_std: Var, sample: Vec<f64> },
    ClippedSurrogate { logp: Var, old: Vec<f64>, adv: Vec<f64>, eps: f64 },
}

enum Value {
    Owned(Matrix),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to an input created by [`Graph::tracked`].
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Dense per-parameter gradients with zeros for untouched entries.
    pub fn into_dense(self, store: &ParamStore) -> Vec<Matrix> {
        store
            .ids()
            .zip(self.params)
            .map(|(id, g)| {
                g.unwrap_or_else(|| {
                    let (r, c) = store.get(id).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store, nodes: Vec::with_capacity(256), param_vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    /// Input leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn tracked(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Tracked)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        Matrix::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect())
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Matrix {
        let x = self.value(a);
        Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|p| f(*p)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |p, q| p + q);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |p, q| p - q);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_map(a, b, |p, q| p * q);
        self.push(out, Op::Mul(a, b))
    }

    /// `a + row`, broadcasting a `1×c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols), r.shape(), "row broadcast shape mismatch");
        let mut out = x.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Scales each row of `a` by the matching entry of the column `s`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Var {
        let (x, c) = (self.value(a), self.value(s));
        assert_eq!((x.rows, 1), c.shape(), "column broadcast shape mismatch");
        let mut out = x.clone();
        for i in 0..out.rows {
            let f = c.data[i];
            for o in out.row_mut(i) {
                *o *= f;
            }
        }
        self.push(out, Op::MulCol(a, s))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |p| p * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |p| p + s);
        self.push(out, Op::AddScalar(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::ln);
        self.push(out, Op::Log(a))
    }

    /// Element-wise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.map(a, |p| p.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Row-wise layer normalization with affine `gamma`/`beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let (rows, cols) = xm.shape();
        assert_eq!(g.shape(), (1, cols), "layer-norm gain shape");
        assert_eq!(b.shape(), (1, cols), "layer-norm bias shape");
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            let orow = out.row_mut(r);
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                orow[c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Multi-head scaled dot-product attention over `groups` independent
    /// sequences. `q` holds `groups·tq` rows, `k` and `v` hold `groups·tk`
    /// rows; all share the model width, which is split across `heads`.
    /// With `causal`, query `i` only sees keys `0..=i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, heads: usize, causal: bool) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.cols;
        assert_eq!(km.cols, d);
        assert_eq!(vm.cols, d);
        assert_eq!(km.rows, vm.rows);
        assert!(groups > 0 && qm.rows % groups == 0 && km.rows % groups == 0, "attention grouping");
        assert_eq!(d % heads, 0, "width must divide into heads");
        let tq = qm.rows / groups;
        let tk = km.rows / groups;
        if causal {
            assert_eq!(tq, tk, "causal attention needs square blocks");
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; groups * heads * tq * tk];
        let mut out = Matrix::zeros(qm.rows, d);
        let mut scores = vec![0.0; tk];
        for g in 0..groups {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tq {
                    let qrow = &qm.row(g * tq + i)[off..off + dh];
                    let visible = if causal { i + 1 } else { tk };
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..visible {
                        let krow = &km.row(g * tk + j)[off..off + dh];
                        let s = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                        scores[j] = s;
                        mx = mx.max(s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut().take(visible) {
                        *s = (*s - mx).exp();
                        z += *s;
                    }
                    let base = ((g * heads + h) * tq + i) * tk;
                    let orow = &mut out.row_mut(g * tq + i)[off..off + dh];
                    for j in 0..visible {
                        let p = scores[j] / z;
                        probs[base + j] = p;
                        let vrow = &vm.row(g * tk + j)[off..off + dh];
                        for (o, vv) in orow.iter_mut().zip(vrow) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        self.push(out, Op::Attention { q, k, v, groups, heads, causal, probs })
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(idx.len(), x.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(x.row(i));
        }
        self.push(out, Op::GatherRows(a, idx))
    }

    /// Mean over consecutive blocks of `group` rows.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Var {
        let x = self.value(a);
        assert!(group > 0 && x.rows.is_multiple_of(group), "group mean block size");
        let n = x.rows / group;
        let mut out = Matrix::zeros(n, x.cols);
        let inv = 1.0 / group as f64;
        for b in 0..n {
            for r in 0..group {
                let src = x.row(b * group + r);
                for (o, s) in out.row_mut(b).iter_mut().zip(src) {
                    *o += s * inv;
                }
            }
        }
        self.push(out, Op::GroupMean(a, group))
    }

    /// Row-wise inner products, producing an `r×1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "row dot shape mismatch");
        let data = (0..x.rows).map(|r| x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum()).collect();
        self.push(Matrix::from_vec(x.rows, 1, data), Op::RowDot(a, b))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts))
    }

    pub fn select_col(&mut self, a: Var, col: usize) -> Var {
        let x = self.value(a);
        let data = (0..x.rows).map(|r| x.get(r, col)).collect();
        self.push(Matrix::from_vec(x.rows, 1, data), Op::SelectCol(a, col))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.sum() / x.len() as f64;
        self.push(Matrix::scalar(s), Op::Mean(a))
    }

    /// Diagonal Gaussian log-density of fixed `sample` rows under `mean`
    /// rows and a shared `1×c` log standard deviation. Returns `r×1`.
    pub fn gaussian_log_prob(&mut self, mean: Var, log_std: Var, sample: Vec<f64>) -> Var {
        let (mu, ls) = (self.value(mean), self.value(log_std));
        let (rows, cols) = mu.shape();
        assert_eq!(ls.shape(), (1, cols));
        assert_eq!(sample.len(), rows * cols);
        let mut out = Matrix::zeros(rows, 1);
        for r in 0..rows {
            let mut lp = 0.0;
            for c in 0..cols {
                let z = (sample[r * cols + c] - mu.get(r, c)) * (-ls.data[c]).exp();
                lp += -0.5 * z * z - ls.data[c] - 0.5 * LN_2PI;
            }
            out.data[r] = lp;
        }
        self.push(out, Op::GaussianLogProb { mean, log_std, sample })
    }

    /// Per-row `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)` with `ρ = exp(logp − old)`.
    pub fn clipped_surrogate(&mut self, logp: Var, old: Vec<f64>, adv: Vec<f64>, eps: f64) -> Var {
        let lp = self.value(logp);
        assert_eq!(lp.shape(), (old.len(), 1));
        assert_eq!(old.len(), adv.len());
        let data = (0..old.len())
            .map(|i| {
                let ratio = (lp.data[i] - old[i]).exp();
                let unclipped = ratio * adv[i];
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv[i];
                unclipped.min(clipped)
            })
            .collect();
        self.push(Matrix::from_vec(old.len(), 1, data), Op::ClippedSurrogate { logp, old, adv, eps })
    }

    /// Back-propagates from the scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let mut params: Vec<Option<Matrix>> = (0..self.store.len()).map(|_| None).collect();
        for (i, pv) in self.param_vars.iter().enumerate() {
            if let Some(v) = pv {
                params[i] = grads[v.0].take();
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Tracked) {
                grads[i] = None;
            }
        }
        Gradients { nodes: grads, params }
    }

    fn backprop_node(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let out = match &node.value {
            Value::Owned(m) => m,
            Value::Param(_) => return,
        };
        match &node.op {
            Op::Input | Op::Tracked | Op::Param => {}
            Op::MatMul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(am.rows, am.cols);
                super::matrix::gemm(1.0, g, false, bm, true, 0.0, &mut ga);
                accumulate(grads, *a, ga);
                let mut gb = Matrix::zeros(bm.rows, bm.cols);
                super::matrix::gemm(1.0, am, true, g, false, 0.0, &mut gb);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut n = g.clone();
                n.scale_assign(-1.0);
                accumulate(grads, *b, n);
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, elementwise(g, bm, |p, q| p * q));
                accumulate(grads, *b, elementwise(g, am, |p, q| p * q));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let mut gr = Matrix::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (o, v) in gr.data.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *row, gr);
            }
            Op::MulCol(a, s) => {
                let (am, sm) = (self.value(*a), self.value(*s));
                let mut ga = g.clone();
                let mut gs = Matrix::zeros(sm.rows, 1);
                for r in 0..g.rows {
                    let f = sm.data[r];
                    gs.data[r] = g.row(r).iter().zip(am.row(r)).map(|(p, q)| p * q).sum();
                    for v in ga.row_mut(r) {
                        *v *= f;
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *s, gs);
            }
            Op::Scale(a, s) => {
                let mut ga = g.clone();
                ga.scale_assign(*s);
                accumulate(grads, *a, ga);
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Gelu(a) => {
                let x = self.value(*a);
                accumulate(
                    grads,
                    *a,
                    elementwise(g, x, |gv, x| {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    }),
                );
            }
            Op::Tanh(a) => accumulate(grads, *a, elementwise(g, out, |gv, t| gv * (1.0 - t * t))),
            Op::Exp(a) => accumulate(grads, *a, elementwise(g, out, |gv, e| gv * e)),
            Op::Log(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, elementwise(g, x, |gv, x| gv / x));
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let (lo, hi) = (*lo, *hi);
                accumulate(grads, *a, elementwise(g, x, |gv, x| if x < lo || x > hi { 0.0 } else { gv }));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gm = self.value(*gamma);
                let (rows, cols) = g.shape();
                let mut gx = Matrix::zeros(rows, cols);
                let mut gg = Matrix::zeros(1, cols);
                let mut gb = Matrix::zeros(1, cols);
                let mut dxhat = vec![0.0; cols];
                for r in 0..rows {
                    let grow = g.row(r);
                    let hrow = &xhat[r * cols..(r + 1) * cols];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for c in 0..cols {
                        gg.data[c] += grow[c] * hrow[c];
                        gb.data[c] += grow[c];
                        dxhat[c] = grow[c] * gm.data[c];
                        m1 += dxhat[c];
                        m2 += dxhat[c] * hrow[c];
                    }
                    m1 /= cols as f64;
                    m2 /= cols as f64;
                    let rs = rstd[r];
                    for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                        *o = rs * (dxhat[c] - m1 - hrow[c] * m2);
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gamma, gg);
                accumulate(grads, *beta, gb);
            }
            Op::Attention { q, k, v, groups, heads, causal, probs } => {
                let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qm.cols;
                let (groups, heads) = (*groups, *heads);
                let tq = qm.rows / groups;
                let tk = km.rows / groups;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Matrix::zeros(qm.rows, d);
                let mut gk = Matrix::zeros(km.rows, d);
                let mut gv = Matrix::zeros(vm.rows, d);
                let mut dp = vec![0.0; tk];
                for gi in 0..groups {
                    for h in 0..heads {
                        let off = h * dh;
                        for i in 0..tq {
                            let visible = if *causal { i + 1 } else { tk };
                            let base = ((gi * heads + h) * tq + i) * tk;
                            let grow = &g.row(gi * tq + i)[off..off + dh];
                            let mut dot = 0.0;
                            for j in 0..visible {
                                let vrow = &vm.row(gi * tk + j)[off..off + dh];
                                dp[j] = grow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                                dot += probs[base + j] * dp[j];
                                let p = probs[base + j];
                                for (o, gg) in gv.row_mut(gi * tk + j)[off..off + dh].iter_mut().zip(grow) {
                                    *o += p * gg;
                                }
                            }
                            let qrow = &qm.row(gi * tq + i)[off..off + dh];
                            for j in 0..visible {
                                let ds = probs[base + j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let krow = &km.row(gi * tk + j)[off..off + dh];
                                for (o, kk) in gq.row_mut(gi * tq + i)[off..off + dh].iter_mut().zip(krow) {
                                    *o += ds * kk;
                                }
                                for (o, qq) in gk.row_mut(gi * tk + j)[off..off + dh].iter_mut().zip(qrow) {
                                    *o += ds * qq;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *q, gq);
                accumulate(grads, *k, gk);
                accumulate(grads, *v, gv);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for (o, &i) in idx.iter().enumerate() {
                    for (dst, src) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                        *dst += src;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::GroupMean(a, group) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                let inv = 1.0 / *group as f64;
                for i in 0..r {
                    for (dst, src) in ga.row_mut(i).iter_mut().zip(g.row(i / group)) {
                        *dst = src * inv;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::RowDot(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let mut ga = bm.clone();
                let mut gb = am.clone();
                for r in 0..am.rows {
                    let f = g.data[r];
                    for v in ga.row_mut(r) {
                        *v *= f;
                    }
                    for v in gb.row_mut(r) {
                        *v *= f;
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let mut gp = Matrix::zeros(r, c);
                    for i in 0..r {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                    }
                    off += c;
                    accumulate(grads, p, gp);
                }
            }
            Op::SelectCol(a, col) => {
                let (r, c) = self.shape(*a);
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    ga.set(i, *col, g.data[i]);
                }
                accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(out.rows, out.cols);
                for r in 0..out.rows {
                    let (y, gy) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for (o, (yv, gv)) in ga.row_mut(r).iter_mut().zip(y.iter().zip(gy)) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                accumulate(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                accumulate(grads, *a, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::GaussianLogProb { mean, log_std, sample } => {
                let (mu, ls) = (self.value(*mean), self.value(*log_std));
                let (rows, cols) = mu.shape();
                let mut gm = Matrix::zeros(rows, cols);
                let mut gl = Matrix::zeros(1, cols);
                for r in 0..rows {
                    let gr = g.data[r];
                    for c in 0..cols {
                        let inv_var = (-2.0 * ls.data[c]).exp();
                        let diff = sample[r * cols + c] - mu.get(r, c);
                        gm.set(r, c, gr * diff * inv_var);
                        gl.data[c] += gr * (diff * diff * inv_var - 1.0);
                    }
                }
                accumulate(grads, *mean, gm);
                accumulate(grads, *log_std, gl);
            }
            Op::ClippedSurrogate { logp, old, adv, eps } => {
                let lp = self.value(*logp);
                let mut gl = Matrix::zeros(lp.rows, 1);
                for i in 0..old.len() {
                    let ratio = (lp.data[i] - old[i]).exp();
                    let unclipped = ratio * adv[i];
                    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv[i];
                    if unclipped <= clipped {
                        gl.data[i] = g.data[i] * unclipped;
                    }
                }
                accumulate(grads, *logp, gl);
            }
        }
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(p, q)| f(*p, *q)).collect())
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}
