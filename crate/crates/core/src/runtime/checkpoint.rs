//! Versioned container of named little-endian `f64` arrays.
//!
//! Layout: magic `SWMTCKPT`, version (u32), 32-byte layout hash, step
//! counter (u64), array count (u32), then per array a u32 name length,
//! UTF-8 name, u32 rows, u32 cols and `rows·cols` f64 values. All
//! integers are little-endian.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::learner::{AgentState, RewardScaler, RunningStat, Stage, TargetParams, Trainer};
use crate::nn::Matrix;
use crate::policy::Policy;

pub const MAGIC: &[u8; 8] = b"SWMTCKPT";
pub const VERSION: u32 = 1;
const MAX_NAME: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}, expected {VERSION}")]
    Version(u32),
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("array name is not UTF-8 at offset {0}")]
    Name(usize),
    #[error("array name of {0} bytes exceeds the limit")]
    NameTooLong(usize),
    #[error("duplicate array `{0}`")]
    Duplicate(String),
    #[error("{0} trailing bytes after the last array")]
    Trailing(usize),
    #[error("layout hash mismatch: checkpoint {found}, configuration {expected}")]
    LayoutHash { expected: String, found: String },
    #[error("missing array `{0}`")]
    Missing(String),
    #[error("array `{name}` is {found:?}, expected {expected:?}")]
    Shape { name: String, expected: (usize, usize), found: (usize, usize) },
    #[error("invalid value in `{0}`")]
    Value(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "array shape");
        Self { name: name.into(), rows, cols, data }
    }

    pub fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(name, 1, n, data)
    }

    fn matrix(name: impl Into<String>, m: &Matrix) -> Self {
        Self::new(name, m.rows, m.cols, m.data.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub layout_hash: [u8; 32],
    pub step: u64,
    pub arrays: Vec<NamedArray>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.offset < n {
            return Err(CheckpointError::Truncated { offset: self.offset, needed: n });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.offset
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let payload: usize = self.arrays.iter().map(|a| 12 + a.name.len() + 8 * a.data.len()).sum();
        let mut out = Vec::with_capacity(56 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.layout_hash);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.extend_from_slice(&(a.rows as u32).to_le_bytes());
            out.extend_from_slice(&(a.cols as u32).to_le_bytes());
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a container. Never panics and never allocates more than the
    /// input can back.
    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, offset: 0 };
        if r.take(8).map_err(|_| CheckpointError::Magic)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let layout_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut arrays: Vec<NamedArray> = Vec::with_capacity(count.min(r.remaining() / 12));
        let mut names = std::collections::HashSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            if len > MAX_NAME {
                return Err(CheckpointError::NameTooLong(len));
            }
            let at = r.offset;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| CheckpointError::Name(at))?.to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(8));
            let raw = match n {
                Some(b) => r.take(b)?,
                None => return Err(CheckpointError::Truncated { offset: r.offset, needed: usize::MAX }),
            };
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            if !names.insert(name.clone()) {
                return Err(CheckpointError::Duplicate(name));
            }
            arrays.push(NamedArray { name, rows, cols, data });
        }
        if r.remaining() > 0 {
            return Err(CheckpointError::Trailing(r.remaining()));
        }
        Ok(Self { version, layout_hash, step, arrays })
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray, CheckpointError> {
        self.arrays.iter().find(|a| a.name == name).ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    fn shaped(&self, name: &str, rows: usize, cols: usize) -> Result<&NamedArray, CheckpointError> {
        let a = self.get(name)?;
        if (a.rows, a.cols) != (rows, cols) {
            return Err(CheckpointError::Shape { name: name.into(), expected: (rows, cols), found: (a.rows, a.cols) });
        }
        Ok(a)
    }

    pub fn verify_layout(&self, expected: &[u8; 32]) -> Result<(), CheckpointError> {
        if &self.layout_hash != expected {
            return Err(CheckpointError::LayoutHash { expected: hex(expected), found: hex(&self.layout_hash) });
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn policy_layout(h: &mut Sha256, prefix: &str, policy: &Policy) {
    // The initial log-std only affects initialization, not the layout.
    let mut model = policy.config().clone();
    model.init_log_std = 0.0;
    h.update(prefix.as_bytes());
    h.update(toml::to_string(&model).expect("model config serializes").as_bytes());
    h.update((policy.obs_dim() as u64).to_le_bytes());
    for e in policy.store().entries() {
        h.update(e.name.as_bytes());
        h.update((e.value.rows as u64).to_le_bytes());
        h.update((e.value.cols as u64).to_le_bytes());
    }
}

/// Hash of the model configuration and every parameter name and shape of
/// the trainer's policies.
pub fn layout_hash(pursuer: &Policy, evader: Option<&Policy>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"satswarm-layout");
    policy_layout(&mut h, "pursuer", pursuer);
    if let Some(e) = evader {
        policy_layout(&mut h, "evader", e);
    }
    h.finalize().into()
}

fn agent_arrays(prefix: &str, a: &AgentState, out: &mut Vec<NamedArray>) {
    let store = a.policy.store();
    for e in store.entries() {
        out.push(NamedArray::matrix(format!("{prefix}/param/{}", e.name), &e.value));
    }
    for (e, m) in store.entries().iter().zip(a.optimizer.square_avg()) {
        out.push(NamedArray::matrix(format!("{prefix}/optim/{}", e.name), m));
    }
    for (&id, m) in a.target.ids().iter().zip(a.target.values()) {
        out.push(NamedArray::matrix(format!("{prefix}/target/{}", store.name(id)), m));
    }
    let s = &a.scaler.stat;
    out.push(NamedArray::vector(format!("{prefix}/stats/reward"), vec![s.count, s.mean, s.var]));
    out.push(NamedArray::vector(format!("{prefix}/stats/returns"), a.scaler.returns.clone()));
    out.push(NamedArray::vector(format!("{prefix}/stats/updates"), vec![a.updates as f64]));
}

fn counter(v: f64, name: &str) -> Result<u64, CheckpointError> {
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= 2f64.powi(53) {
        Ok(v as u64)
    } else {
        Err(CheckpointError::Value(name.to_string()))
    }
}

fn restore_agent(prefix: &str, a: &mut AgentState, ck: &Checkpoint, gamma: f64) -> Result<(), CheckpointError> {
    let names: Vec<String> = a.policy.store().entries().iter().map(|e| e.name.clone()).collect();
    let ids: Vec<_> = a.policy.store().ids().collect();
    let mut square = Vec::with_capacity(ids.len());
    for (id, name) in ids.iter().zip(&names) {
        let (rows, cols) = a.policy.store().get(*id).shape();
        let p = ck.shaped(&format!("{prefix}/param/{name}"), rows, cols)?;
        a.policy.store_mut().get_mut(*id).data.clone_from(&p.data);
        let o = ck.shaped(&format!("{prefix}/optim/{name}"), rows, cols)?;
        square.push(Matrix::from_vec(rows, cols, o.data.clone()));
    }
    for (dst, src) in a.optimizer.square_avg_mut().iter_mut().zip(square) {
        *dst = src;
    }
    let target_ids = a.target.ids().to_vec();
    let mut values = Vec::with_capacity(target_ids.len());
    for &id in &target_ids {
        let (rows, cols) = a.policy.store().get(id).shape();
        let t = ck.shaped(&format!("{prefix}/target/{}", a.policy.store().name(id)), rows, cols)?;
        values.push(Matrix::from_vec(rows, cols, t.data.clone()));
    }
    a.target = TargetParams::from_parts(target_ids, values);
    let r = ck.shaped(&format!("{prefix}/stats/reward"), 1, 3)?;
    let returns = ck.shaped(&format!("{prefix}/stats/returns"), 1, a.scaler.returns.len())?;
    a.scaler = RewardScaler {
        stat: RunningStat { count: r.data[0], mean: r.data[1], var: r.data[2] },
        returns: returns.data.clone(),
        gamma,
    };
    let u = ck.shaped(&format!("{prefix}/stats/updates"), 1, 1)?;
    a.updates = counter(u.data[0], "updates")?;
    Ok(())
}

/// Full trainer state: both policies with optimizer and target state,
/// reward statistics, curriculum and counters.
pub fn trainer_checkpoint(t: &Trainer) -> Checkpoint {
    let mut arrays = Vec::new();
    agent_arrays("pursuer", &t.pursuer, &mut arrays);
    if let Some(e) = &t.evader {
        agent_arrays("evader", e, &mut arrays);
    }
    arrays.push(NamedArray::vector(
        "stats/counters",
        vec![t.env_steps as f64, t.evader_steps as f64, t.rounds as f64, t.episodes as f64],
    ));
    arrays.push(NamedArray::vector("stats/curriculum_stage", vec![f64::from(t.curriculum.stage().index())]));
    arrays.push(NamedArray::vector(
        "stats/curriculum_window",
        t.curriculum.history().map(|b| if b { 1.0 } else { 0.0 }).collect(),
    ));
    Checkpoint {
        version: VERSION,
        layout_hash: layout_hash(&t.pursuer.policy, t.evader.as_ref().map(|e| &e.policy)),
        step: t.env_steps,
        arrays,
    }
}

/// Loads `ck` into a trainer built from the same configuration and
/// restarts its environments. Taken right after
/// [`Trainer::restart_pool`], a checkpoint resumes bit-exactly.
pub fn restore_trainer(t: &mut Trainer, ck: &Checkpoint) -> Result<(), CheckpointError> {
    ck.verify_layout(&layout_hash(&t.pursuer.policy, t.evader.as_ref().map(|e| &e.policy)))?;
    let c = ck.shaped("stats/counters", 1, 4)?;
    t.env_steps = counter(c.data[0], "env_steps")?;
    t.evader_steps = counter(c.data[1], "evader_steps")?;
    t.rounds = counter(c.data[2], "rounds")?;
    t.episodes = counter(c.data[3], "episodes")?;
    let s = ck.shaped("stats/curriculum_stage", 1, 1)?;
    let stage = u8::try_from(counter(s.data[0], "curriculum_stage")?)
        .ok()
        .and_then(Stage::from_index)
        .ok_or_else(|| CheckpointError::Value("curriculum_stage".into()))?;
    let history = ck.get("stats/curriculum_window")?.data.iter().map(|&v| v != 0.0).collect::<Vec<_>>();
    t.curriculum.restore(stage, history);
    // The pool restart clears per-environment returns; the saved ones are
    // restored after it.
    t.restart_pool().map_err(|e| CheckpointError::Value(e.to_string()))?;
    let gamma = t.hyper.gamma;
    restore_agent("pursuer", &mut t.pursuer, ck, gamma)?;
    if let Some(e) = t.evader.as_mut() {
        restore_agent("evader", e, ck, gamma)?;
    }
    Ok(())
}

/// Loads only the policy parameters of `prefix` into `policy`.
pub fn load_policy(policy: &mut Policy, prefix: &str, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let ids: Vec<_> = policy.store().ids().collect();
    for id in ids {
        let (rows, cols) = policy.store().get(id).shape();
        let name = format!("{prefix}/param/{}", policy.store().name(id));
        let a = ck.shaped(&name, rows, cols)?;
        policy.store_mut().get_mut(id).data.clone_from(&a.data);
    }
    Ok(())
}
