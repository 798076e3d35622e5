//! Encoder–decoder multi-agent transformer.
//!
//! The encoder embeds a window of joint observations as a grid of
//! `window × agents` tokens, runs self-attention blocks over the grid and
//! reads each agent's representation from its last-timestep token. The
//! decoder emits one squashed-Gaussian action per agent; agent `m` sees the
//! start token plus the actions of agents `0..m` through a causal mask and
//! all representations through cross-attention.

mod window;

pub use window::ObservationWindow;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::{ExpertBank, MixOutput};
use crate::nn::{Graph, LayerNorm, Linear, Matrix, ParamId, ParamStore, Var, LN_2PI};

pub const ACTION_DIM: usize = 3;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const TASKS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("agent index {index} out of range for {agents} agents")]
    AgentIndex { index: usize, agents: usize },
    #[error("non-finite activations in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Last,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks_enc: usize,
    pub n_blocks_dec: usize,
    pub d_ff: usize,
    pub window: usize,
    pub m_max: usize,
    pub k_max: usize,
    pub action_dim: usize,
    pub experts: usize,
    pub pooling: Pooling,
    /// Learned per-slot embeddings added to encoder and decoder tokens.
    pub agent_embedding: bool,
    /// Decode agents in a fresh random order every episode.
    pub random_order: bool,
    pub init_log_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 2,
            n_blocks_enc: 2,
            n_blocks_dec: 2,
            d_ff: 128,
            window: 3,
            m_max: 5,
            k_max: 2,
            action_dim: ACTION_DIM,
            experts: 2,
            pooling: Pooling::Last,
            agent_embedding: true,
            random_order: false,
            init_log_std: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |s: String| Err(PolicyError::Config(s));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.action_dim != ACTION_DIM {
            return bad(format!("action_dim must be {ACTION_DIM}"));
        }
        if self.experts == 0 {
            return bad("experts must be at least 1".into());
        }
        if self.d_ff == 0 || self.m_max == 0 || self.k_max == 0 {
            return bad("d_ff, m_max and k_max must be positive".into());
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.init_log_std) {
            return bad(format!("init_log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn new<R: Rng + ?Sized>(s: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::new(s, &format!("{name}.q"), d, d, 1.0, rng),
            k: Linear::new(s, &format!("{name}.k"), d, d, 1.0, rng),
            v: Linear::new(s, &format!("{name}.v"), d, d, 1.0, rng),
            o: Linear::new(s, &format!("{name}.o"), d, d, 1.0, rng),
        }
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var, ctx: Var, groups: usize, heads: usize, causal: bool) -> Var {
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, ctx);
        let v = self.v.forward(g, ctx);
        let a = g.attention(q, k, v, groups, heads, causal);
        self.o.forward(g, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new<R: Rng + ?Sized>(s: &mut ParamStore, name: &str, d: usize, ff: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(s, &format!("{name}.up"), d, ff, 1.0, rng),
            down: Linear::new(s, &format!("{name}.down"), ff, d, 1.0, rng),
        }
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderBlock {
    attn: Attention,
    ln1: LayerNorm,
    ff: FeedForward,
    ln2: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderBlock {
    self_attn: Attention,
    ln1: LayerNorm,
    cross: Attention,
    ln2: LayerNorm,
    ff: FeedForward,
    ln3: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
struct Head {
    hidden: Linear,
    ln: LayerNorm,
    out: Linear,
}

impl Head {
    fn new<R: Rng + ?Sized>(s: &mut ParamStore, name: &str, d: usize, out: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(s, &format!("{name}.hidden"), d, d, 1.0, rng),
            ln: LayerNorm::new(s, &format!("{name}.ln"), d),
            out: Linear::new(s, &format!("{name}.out"), d, out, gain, rng),
        }
    }

    fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.hidden.forward(g, x);
        let h = g.gelu(h);
        let h = self.ln.forward(g, h);
        self.out.forward(g, h)
    }
}

/// Graph handles produced by the encoder for `batch` samples of `agents`.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `(batch·agents)×d` representations, rows ordered sample-major.
    pub reps: Var,
    /// `(batch·agents)×1` values.
    pub values: Var,
    pub batch: usize,
    pub agents: usize,
}

/// Per-agent representations and values for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub reps: Matrix,
    pub values: Vec<f64>,
}

/// Per-agent diagonal Gaussian over pre-squash actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
}

impl ActionDistribution {
    /// Entropy of the unsquashed Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| l + 0.5 * (1.0 + LN_2PI)).sum()
    }

    /// Log-density of `raw` including the tanh squash correction.
    pub fn log_prob(&self, raw: &[f64; ACTION_DIM]) -> f64 {
        let mut lp = 0.0;
        for c in 0..ACTION_DIM {
            let z = (raw[c] - self.mean[c]) * (-self.log_std[c]).exp();
            lp += -0.5 * z * z - self.log_std[c] - 0.5 * LN_2PI;
        }
        lp - squash_correction(raw)
    }
}

/// `Σ log(1 − tanh²(u))`, evaluated as `2(ln 2 − u − softplus(−2u))`.
pub fn squash_correction(raw: &[f64]) -> f64 {
    raw.iter()
        .map(|&u| {
            let x = -2.0 * u;
            let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
            2.0 * (std::f64::consts::LN_2 - u - softplus)
        })
        .sum()
}

/// Squashed action in units of the acceleration bound.
pub fn squash(raw: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
    raw.map(f64::tanh)
}

/// One decoded agent action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentAction {
    /// Pre-squash Gaussian sample.
    pub raw: [f64; ACTION_DIM],
    /// `tanh(raw)`, to be scaled by the acceleration bound.
    pub unit: [f64; ACTION_DIM],
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    config: ModelConfig,
    obs_dim: usize,
    store: ParamStore,
    input_ln: LayerNorm,
    embed: Linear,
    time_embed: ParamId,
    slot_embed: Option<ParamId>,
    encoder: Vec<EncoderBlock>,
    value_head: Head,
    experts: ExpertBank,
    context: Linear,
    action_embed: Linear,
    decoder: Vec<DecoderBlock>,
    action_head: Head,
    log_std: ParamId,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, obs_dim: usize, rng: &mut R) -> Result<Self, PolicyError> {
        config.validate()?;
        if obs_dim == 0 {
            return Err(PolicyError::Config("obs_dim must be positive".into()));
        }
        let d = config.d_model;
        let s = &mut ParamStore::new();
        let input_ln = LayerNorm::new(s, "enc.input_ln", obs_dim);
        let embed = Linear::new(s, "enc.embed", obs_dim, d, 1.0, rng);
        let time_embed = s.add("enc.time_embed", Matrix::zeros(config.window, d));
        let slot_embed =
            config.agent_embedding.then(|| s.add("slot_embed", Matrix::zeros(config.m_max.max(config.k_max), d)));
        let encoder = (0..config.n_blocks_enc)
            .map(|b| EncoderBlock {
                attn: Attention::new(s, &format!("enc.{b}.attn"), d, rng),
                ln1: LayerNorm::new(s, &format!("enc.{b}.ln1"), d),
                ff: FeedForward::new(s, &format!("enc.{b}.ff"), d, config.d_ff, rng),
                ln2: LayerNorm::new(s, &format!("enc.{b}.ln2"), d),
            })
            .collect();
        let value_head = Head::new(s, "enc.value", d, 1, 1.0, rng);
        let experts = ExpertBank::new(s, "", d, config.experts, TASKS, rng);
        let context = Linear::new(s, "dec.context", d, d, 1.0, rng);
        let action_embed = Linear::new(s, "dec.action_embed", ACTION_DIM + 1, d, 1.0, rng);
        let decoder = (0..config.n_blocks_dec)
            .map(|b| DecoderBlock {
                self_attn: Attention::new(s, &format!("dec.{b}.self"), d, rng),
                ln1: LayerNorm::new(s, &format!("dec.{b}.ln1"), d),
                cross: Attention::new(s, &format!("dec.{b}.cross"), d, rng),
                ln2: LayerNorm::new(s, &format!("dec.{b}.ln2"), d),
                ff: FeedForward::new(s, &format!("dec.{b}.ff"), d, config.d_ff, rng),
                ln3: LayerNorm::new(s, &format!("dec.{b}.ln3"), d),
            })
            .collect();
        let action_head = Head::new(s, "dec.action", d, ACTION_DIM, 0.01, rng);
        let log_std = s.add("dec.log_std", Matrix::filled(1, ACTION_DIM, config.init_log_std));
        let store = std::mem::take(s);
        Ok(Self {
            config,
            obs_dim,
            store,
            input_ln,
            embed,
            time_embed,
            slot_embed,
            encoder,
            value_head,
            experts,
            context,
            action_embed,
            decoder,
            action_head,
            log_std,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn experts(&self) -> &ExpertBank {
        &self.experts
    }

    /// Value-head parameters, the subset tracked by the target network.
    pub fn value_head_params(&self) -> Vec<ParamId> {
        let prefix = "enc.value.";
        self.store.ids().filter(|&id| self.store.name(id).starts_with(prefix)).collect()
    }

    pub fn log_std(&self) -> [f64; ACTION_DIM] {
        let v = &self.store.get(self.log_std).data;
        std::array::from_fn(|c| v[c].clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    fn check_windows(&self, windows: &[&ObservationWindow]) -> Result<usize, PolicyError> {
        let first = windows.first().ok_or_else(|| PolicyError::Shape("empty batch".into()))?;
        let n = first.agents();
        if n == 0 || n > self.config.m_max.max(self.config.k_max) {
            return Err(PolicyError::Shape(format!("{n} agents exceed layout capacity")));
        }
        for w in windows {
            if w.agents() != n || w.window() != self.config.window || w.obs_dim() != self.obs_dim {
                return Err(PolicyError::Shape(format!(
                    "window {}x{}x{} does not match {}x{}x{}",
                    w.window(),
                    w.agents(),
                    w.obs_dim(),
                    self.config.window,
                    n,
                    self.obs_dim
                )));
            }
        }
        Ok(n)
    }

    /// Builds the encoder over a batch of windows sharing one team size.
    pub fn encode_graph(&self, g: &mut Graph<'_>, windows: &[&ObservationWindow]) -> Result<Encoded, PolicyError> {
        let n = self.check_windows(windows)?;
        let b = windows.len();
        let w = self.config.window;
        let mut x = Vec::with_capacity(b * w * n * self.obs_dim);
        for win in windows {
            x.extend_from_slice(win.data());
        }
        let x = g.input(Matrix::from_vec(b * w * n, self.obs_dim, x));
        self.encode_tokens(g, x, b, n)
    }

    /// Encoder on an explicit `(batch·window·agents)×obs_dim` token node.
    pub(crate) fn encode_tokens(&self, g: &mut Graph<'_>, x: Var, b: usize, n: usize) -> Result<Encoded, PolicyError> {
        let w = self.config.window;
        let d = self.config.d_model;
        let x = self.input_ln.forward(g, x);
        let x = self.embed.forward(g, x);
        let mut x = g.gelu(x);
        let te = g.param(self.time_embed);
        let t_idx = (0..b * w * n).map(|r| (r / n) % w).collect();
        let t = g.gather_rows(te, t_idx);
        x = g.add(x, t);
        if let Some(se) = self.slot_embed {
            let se = g.param(se);
            let s = g.gather_rows(se, (0..b * w * n).map(|r| r % n).collect());
            x = g.add(x, s);
        }
        for blk in &self.encoder {
            let a = blk.attn.forward(g, x, x, b, self.config.n_heads, false);
            let r = g.add(x, a);
            let h = blk.ln1.forward(g, r);
            let f = blk.ff.forward(g, h);
            let r = g.add(h, f);
            x = blk.ln2.forward(g, r);
        }
        let reps = match self.config.pooling {
            Pooling::Last => {
                let idx = (0..b).flat_map(|s| (0..n).map(move |a| (s * w + w - 1) * n + a)).collect();
                g.gather_rows(x, idx)
            }
            Pooling::Mean => {
                let idx =
                    (0..b).flat_map(|s| (0..n).flat_map(move |a| (0..w).map(move |t| (s * w + t) * n + a))).collect();
                let grid = g.gather_rows(x, idx);
                g.group_mean(grid, w)
            }
        };
        let values = self.value_head.forward(g, reps);
        if !g.value(reps).is_finite() || !g.value(values).is_finite() {
            return Err(PolicyError::NonFinite("encoder"));
        }
        debug_assert_eq!(g.shape(reps), (b * n, d));
        Ok(Encoded { reps, values, batch: b, agents: n })
    }

    /// Expert mixture on the agent-mean representation of each sample.
    pub fn mix_graph(&self, g: &mut Graph<'_>, enc: &Encoded, tasks: &[usize]) -> Result<MixOutput, PolicyError> {
        if tasks.len() != enc.batch || tasks.iter().any(|&t| t >= TASKS) {
            return Err(PolicyError::Shape(format!("need {} task indices below {TASKS}", enc.batch)));
        }
        let pooled = g.group_mean(enc.reps, enc.agents);
        Ok(self.experts.forward(g, pooled, tasks))
    }

    /// Decoder over the first `len` positions of every sample. `inputs`
    /// holds `batch·len` rows of `[unit action of the previous agent, start flag]`.
    /// Returns the `(batch·len)×3` Gaussian means.
    pub fn decode_graph(&self, g: &mut Graph<'_>, enc: &Encoded, h: Var, inputs: Matrix, len: usize) -> Var {
        let (b, n) = (enc.batch, enc.agents);
        assert!(len >= 1 && len <= n);
        assert_eq!(inputs.shape(), (b * len, ACTION_DIM + 1));
        let tokens = g.input(inputs);
        let e = self.action_embed.forward(g, tokens);
        let mut x = g.gelu(e);
        let own = g.gather_rows(enc.reps, (0..b * len).map(|r| (r / len) * n + r % len).collect());
        x = g.add(x, own);
        let ctx = self.context.forward(g, h);
        let ctx = g.gather_rows(ctx, (0..b * len).map(|r| r / len).collect());
        x = g.add(x, ctx);
        if let Some(se) = self.slot_embed {
            let se = g.param(se);
            let s = g.gather_rows(se, (0..b * len).map(|r| r % len).collect());
            x = g.add(x, s);
        }
        for blk in &self.decoder {
            let a = blk.self_attn.forward(g, x, x, b, self.config.n_heads, true);
            let r = g.add(x, a);
            let h1 = blk.ln1.forward(g, r);
            let c = blk.cross.forward(g, h1, enc.reps, b, self.config.n_heads, false);
            let r = g.add(h1, c);
            let h2 = blk.ln2.forward(g, r);
            let f = blk.ff.forward(g, h2);
            let r = g.add(h2, f);
            x = blk.ln3.forward(g, r);
        }
        self.action_head.forward(g, x)
    }

    pub fn log_std_graph(&self, g: &mut Graph<'_>) -> Var {
        let ls = g.param(self.log_std);
        g.clamp(ls, LOG_STD_MIN, LOG_STD_MAX)
    }

    /// Teacher-forced decoder inputs: start token, then the unit actions
    /// of agents `0..n−1`, per sample.
    pub fn teacher_inputs(actions: &[Vec<AgentAction>]) -> Matrix {
        let rows: usize = actions.iter().map(Vec::len).sum();
        let mut m = Matrix::zeros(rows, ACTION_DIM + 1);
        let mut r = 0;
        for sample in actions {
            for i in 0..sample.len() {
                if i == 0 {
                    m.set(r, ACTION_DIM, 1.0);
                } else {
                    m.row_mut(r)[..ACTION_DIM].copy_from_slice(&sample[i - 1].unit);
                }
                r += 1;
            }
        }
        m
    }

    /// Log-probabilities (with squash correction) of stored raw actions
    /// under teacher-forced means, as a `(batch·n)×1` node.
    pub fn log_prob_graph(&self, g: &mut Graph<'_>, means: Var, log_std: Var, actions: &[Vec<AgentAction>]) -> Var {
        let raw: Vec<f64> = actions.iter().flatten().flat_map(|a| a.raw).collect();
        let corr: Vec<f64> = actions.iter().flatten().map(|a| -squash_correction(&a.raw)).collect();
        let lp = g.gaussian_log_prob(means, log_std, raw);
        let c = g.input(Matrix::from_vec(corr.len(), 1, corr));
        g.add(lp, c)
    }

    /// Per-agent entropy of the unsquashed Gaussian as a `1×1` node.
    pub fn entropy_graph(&self, g: &mut Graph<'_>, log_std: Var) -> Var {
        let s = g.sum(log_std);
        g.add_scalar(s, ACTION_DIM as f64 * 0.5 * (1.0 + LN_2PI))
    }

    /// Encodes one window.
    pub fn encode(&self, window: &ObservationWindow) -> Result<Representation, PolicyError> {
        let mut g = Graph::new(&self.store);
        let enc = self.encode_graph(&mut g, &[window])?;
        Ok(Representation { reps: g.value(enc.reps).clone(), values: g.value(enc.values).data.clone() })
    }

    /// Blended expert context for one representation.
    pub fn expert_context(&self, reps: &Representation, task: usize) -> Result<Vec<f64>, PolicyError> {
        let mut g = Graph::new(&self.store);
        let enc = self.detached(&mut g, &[reps]);
        let mix = self.mix_graph(&mut g, &enc, &[task])?;
        Ok(g.value(mix.h).data.clone())
    }

    fn detached(&self, g: &mut Graph<'_>, reps: &[&Representation]) -> Encoded {
        let n = reps[0].reps.rows;
        let d = self.config.d_model;
        let mut data = Vec::with_capacity(reps.len() * n * d);
        let mut values = Vec::with_capacity(reps.len() * n);
        for r in reps {
            data.extend_from_slice(&r.reps.data);
            values.extend_from_slice(&r.values);
        }
        let r = g.input(Matrix::from_vec(reps.len() * n, d, data));
        let v = g.input(Matrix::from_vec(reps.len() * n, 1, values));
        Encoded { reps: r, values: v, batch: reps.len(), agents: n }
    }

    fn check_rep(&self, reps: &Representation, h: &[f64]) -> Result<usize, PolicyError> {
        let n = reps.reps.rows;
        if reps.reps.cols != self.config.d_model || n == 0 {
            return Err(PolicyError::Shape("representation width".into()));
        }
        if h.len() != self.config.d_model {
            return Err(PolicyError::Shape(format!(
                "expert context has width {}, expected {}",
                h.len(),
                self.config.d_model
            )));
        }
        Ok(n)
    }

    /// Distribution and sample for agent `m` given the decoded actions of
    /// agents `0..m`.
    pub fn decode_act<R: Rng + ?Sized>(
        &self,
        reps: &Representation,
        h: &[f64],
        prev: &[AgentAction],
        m: usize,
        sampling: Sampling,
        rng: &mut R,
    ) -> Result<(AgentAction, ActionDistribution), PolicyError> {
        let n = self.check_rep(reps, h)?;
        if m >= n {
            return Err(PolicyError::AgentIndex { index: m, agents: n });
        }
        if prev.len() != m {
            return Err(PolicyError::Shape(format!("agent {m} needs {m} previous actions, got {}", prev.len())));
        }
        let mut g = Graph::new(&self.store);
        let enc = self.detached(&mut g, &[reps]);
        let hv = g.input(Matrix::from_vec(1, h.len(), h.to_vec()));
        let mut prefix = prev.to_vec();
        prefix.push(AgentAction { raw: [0.0; 3], unit: [0.0; 3], log_prob: 0.0 });
        let inputs = Self::teacher_inputs(&[prefix]);
        let means = self.decode_graph(&mut g, &enc, hv, inputs, m + 1);
        let mean: [f64; ACTION_DIM] = std::array::from_fn(|c| g.value(means).get(m, c));
        let dist = ActionDistribution { mean, log_std: self.log_std() };
        Ok((sample(&dist, sampling, rng), dist))
    }

    /// Teacher-forced log-probabilities and entropies for a full joint action.
    pub fn decode_logprobs(
        &self,
        reps: &Representation,
        h: &[f64],
        actions: &[AgentAction],
    ) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
        let n = self.check_rep(reps, h)?;
        if actions.len() != n {
            return Err(PolicyError::Shape(format!("{} actions for {n} agents", actions.len())));
        }
        let mut g = Graph::new(&self.store);
        let enc = self.detached(&mut g, &[reps]);
        let hv = g.input(Matrix::from_vec(1, h.len(), h.to_vec()));
        let batch = [actions.to_vec()];
        let means = self.decode_graph(&mut g, &enc, hv, Self::teacher_inputs(&batch), n);
        let ls = self.log_std_graph(&mut g);
        let lp = self.log_prob_graph(&mut g, means, ls, &batch);
        let ent = self.entropy_graph(&mut g, ls);
        let e = g.value(ent).item();
        Ok((g.value(lp).data.clone(), vec![e; n]))
    }

    /// Batched autoregressive decoding for rollouts. Returns actions per
    /// sample together with the values from the same encoder pass.
    pub fn act_batch<R: Rng + ?Sized>(
        &self,
        windows: &[&ObservationWindow],
        tasks: &[usize],
        sampling: Sampling,
        rng: &mut R,
    ) -> Result<(Vec<Vec<AgentAction>>, Vec<Vec<f64>>), PolicyError> {
        let mut g = Graph::new(&self.store);
        let enc = self.encode_graph(&mut g, windows)?;
        let mix = self.mix_graph(&mut g, &enc, tasks)?;
        let (b, n) = (enc.batch, enc.agents);
        let log_std = self.log_std();
        let mut actions: Vec<Vec<AgentAction>> = vec![Vec::with_capacity(n); b];
        for m in 0..n {
            let mut rows = actions.clone();
            for r in &mut rows {
                r.push(AgentAction { raw: [0.0; 3], unit: [0.0; 3], log_prob: 0.0 });
            }
            let means = self.decode_graph(&mut g, &enc, mix.h, Self::teacher_inputs(&rows), m + 1);
            let mv = g.value(means);
            for (s, acts) in actions.iter_mut().enumerate() {
                let mean = std::array::from_fn(|c| mv.get(s * (m + 1) + m, c));
                acts.push(sample(&ActionDistribution { mean, log_std }, sampling, rng));
            }
        }
        let values = g.value(enc.values).data.chunks(n).map(<[f64]>::to_vec).collect();
        Ok((actions, values))
    }

    /// Values only, for bootstrapping.
    pub fn values_batch(&self, windows: &[&ObservationWindow]) -> Result<Vec<Vec<f64>>, PolicyError> {
        let mut g = Graph::new(&self.store);
        let enc = self.encode_graph(&mut g, windows)?;
        Ok(g.value(enc.values).data.chunks(enc.agents).map(<[f64]>::to_vec).collect())
    }
}

fn sample<R: Rng + ?Sized>(dist: &ActionDistribution, sampling: Sampling, rng: &mut R) -> AgentAction {
    let raw: [f64; ACTION_DIM] = match sampling {
        Sampling::Deterministic => dist.mean,
        Sampling::Stochastic => {
            std::array::from_fn(|c| dist.mean[c] + dist.log_std[c].exp() * rng.sample::<f64, _>(StandardNormal))
        }
    };
    AgentAction { raw, unit: squash(&raw), log_prob: dist.log_prob(&raw) }
}
