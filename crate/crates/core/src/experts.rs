//! Soft mixture of task experts.
//!
//! Each expert maps the agent-averaged representation to `e_j`, then to a
//! key `k_j = e_j W_j` and a value `v_j = e_j V_j`. The active task query
//! scores the keys; the softmax of the scores blends the values into the
//! context vector `h` consumed by the decoder.

use rand::Rng;
use thiserror::Error;

use crate::nn::{Graph, Linear, Matrix, ParamId, ParamStore, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixError {
    #[error("mixture logits are not finite: {0:?}")]
    NonFinite(Vec<f64>),
    #[error("need at least one expert")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("weights are not on the simplex (sum {0})")]
    NotSimplex(f64),
}

/// Expert weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights(Vec<f64>);

impl MixWeights {
    pub fn new(alpha: Vec<f64>) -> Result<Self, MixError> {
        if alpha.is_empty() {
            return Err(MixError::Empty);
        }
        let s: f64 = alpha.iter().sum();
        if alpha.iter().any(|&a| !(a.is_finite() && a >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(MixError::NotSimplex(s));
        }
        Ok(Self(alpha))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax over `query · k_j` with max subtraction.
pub fn mixture_weights(query: &[f64], keys: &[Vec<f64>]) -> Result<MixWeights, MixError> {
    if keys.is_empty() {
        return Err(MixError::Empty);
    }
    if keys.iter().any(|k| k.len() != query.len()) {
        return Err(MixError::Shape(format!("keys must have width {}", query.len())));
    }
    let logits: Vec<f64> = keys.iter().map(|k| dot(k, query)).collect();
    softmax(&logits)
}

pub fn softmax(logits: &[f64]) -> Result<MixWeights, MixError> {
    if logits.is_empty() {
        return Err(MixError::Empty);
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(MixError::NonFinite(logits.to_vec()));
    }
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(MixWeights(e.into_iter().map(|v| v / z).collect()))
}

/// `h = Σ_j α_j v_j`.
pub fn mix(alpha: &MixWeights, values: &[Vec<f64>]) -> Result<Vec<f64>, MixError> {
    let a = alpha.as_slice();
    if a.len() != values.len() {
        return Err(MixError::Shape(format!("{} weights for {} values", a.len(), values.len())));
    }
    let width = values[0].len();
    if values.iter().any(|v| v.len() != width) {
        return Err(MixError::Shape("values differ in width".into()));
    }
    let mut h = vec![0.0; width];
    for (w, v) in a.iter().zip(values) {
        for (o, x) in h.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(h)
}

/// `−(1/M) Σ_j η log(α_j + ε)`.
pub fn reg_loss(alpha: &MixWeights, eta: f64, eps: f64) -> f64 {
    if eta == 0.0 {
        return 0.0;
    }
    let a = alpha.as_slice();
    -eta * a.iter().map(|&x| (x + eps).ln()).sum::<f64>() / a.len() as f64
}

/// Batch-mean of [`reg_loss`] over rows of a `B×M` weight node.
pub fn reg_loss_graph(g: &mut Graph<'_>, alpha: Var, eta: f64, eps: f64) -> Var {
    let shifted = g.add_scalar(alpha, eps);
    let logs = g.log(shifted);
    let m = g.mean(logs);
    g.scale(m, -eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub hidden: Linear,
    pub out: Linear,
    pub key: ParamId,
    pub value: ParamId,
}

/// Expert networks plus one trainable query per task.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertBank {
    pub experts: Vec<Expert>,
    pub queries: ParamId,
    pub width: usize,
}

pub struct MixOutput {
    /// `B×d` blended context.
    pub h: Var,
    /// `B×M` weights.
    pub alpha: Var,
}

impl ExpertBank {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        count: usize,
        tasks: usize,
        rng: &mut R,
    ) -> Self {
        assert!(count >= 1 && tasks >= 1);
        let experts = (0..count)
            .map(|j| Expert {
                hidden: Linear::new(store, &format!("{prefix}experts/{j}.hidden"), width, width, 1.0, rng),
                out: Linear::new(store, &format!("{prefix}experts/{j}.out"), width, width, 1.0, rng),
                key: store.add(format!("{prefix}experts/{j}.key"), crate::nn::orthogonal(width, width, 1.0, rng)),
                value: store.add(format!("{prefix}experts/{j}.value"), crate::nn::orthogonal(width, width, 1.0, rng)),
            })
            .collect();
        let queries = store.add(format!("{prefix}experts/queries"), crate::nn::orthogonal(tasks, width, 1.0, rng));
        Self { experts, queries, width }
    }

    /// Expert outputs `e_j` for `B×d` pooled inputs.
    pub fn outputs(&self, g: &mut Graph<'_>, pooled: Var) -> Vec<Var> {
        self.experts
            .iter()
            .map(|e| {
                let x = e.hidden.forward(g, pooled);
                let x = g.gelu(x);
                e.out.forward(g, x)
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph<'_>, pooled: Var, tasks: &[usize]) -> MixOutput {
        let outs = self.outputs(g, pooled);
        let qall = g.param(self.queries);
        let q = g.gather_rows(qall, tasks.to_vec());
        let mut logits = Vec::with_capacity(outs.len());
        let mut values = Vec::with_capacity(outs.len());
        for (e, &out) in self.experts.iter().zip(&outs) {
            let wk = g.param(e.key);
            let wv = g.param(e.value);
            let k = g.matmul(out, wk);
            logits.push(g.row_dot(k, q));
            values.push(g.matmul(out, wv));
        }
        let l = g.concat_cols(logits);
        let alpha = g.softmax_rows(l);
        let mut h = None;
        for (j, v) in values.into_iter().enumerate() {
            let a = g.select_col(alpha, j);
            let term = g.mul_col(v, a);
            h = Some(match h {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        MixOutput { h: h.expect("at least one expert"), alpha }
    }

    /// Weights for a single pooled row, evaluated without recording gradients.
    pub fn weights_for(&self, store: &ParamStore, pooled: &[f64], task: usize) -> Result<MixWeights, MixError> {
        let mut g = Graph::new(store);
        let x = g.input(Matrix::from_vec(1, pooled.len(), pooled.to_vec()));
        let out = self.forward(&mut g, x, &[task]);
        MixWeights::new(g.value(out.alpha).data.clone())
    }
}
