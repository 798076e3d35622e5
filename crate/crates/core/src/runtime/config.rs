//! Run configuration: one TOML document with `[run]`, `[env]`, `[model]`
//! and `[train]` sections. Every key has a default; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RuntimeError;
use crate::env::EnvConfig;
use crate::learner::{Hyperparams, SelfPlayMode};
use crate::policy::ModelConfig;

/// Environment variable that roots relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "SATSWARM_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scenario: SelfPlayMode,
    pub seed: u64,
    /// Relative paths resolve against `SATSWARM_OUTPUT_ROOT` when set.
    pub output_dir: String,
    /// Environment steps between checkpoints.
    pub checkpoint_interval: u64,
    /// Total environment steps of `train`.
    pub budget: u64,
    /// Episodes of `evaluate`.
    pub eval_runs: usize,
    /// Sample actions during evaluation instead of taking the mean.
    pub stochastic_eval: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            scenario: SelfPlayMode::Random,
            seed: 1,
            output_dir: "runs/default".into(),
            checkpoint_interval: 100_000,
            budget: 1_000_000,
            eval_runs: 500,
            stochastic_eval: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: Hyperparams,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, RuntimeError> {
        let cfg: Self = toml::from_str(text).map_err(|e| RuntimeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| RuntimeError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        self.env.validate().map_err(|e| RuntimeError::Config(format!("[env] {e}")))?;
        self.model.validate().map_err(|e| RuntimeError::Config(format!("[model] {e}")))?;
        self.train.validate().map_err(|e| RuntimeError::Config(format!("[train] {e}")))?;
        if self.model.m_max != self.env.m_max || self.model.k_max != self.env.k_max {
            return Err(RuntimeError::Config(format!(
                "[model] m_max/k_max {}x{} must equal [env] m_max/k_max {}x{}",
                self.model.m_max, self.model.k_max, self.env.m_max, self.env.k_max
            )));
        }
        if self.run.checkpoint_interval == 0 {
            return Err(RuntimeError::Config("[run] `checkpoint_interval` must be at least 1".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization,
    /// leaving out the budget, evaluation count and output directory so
    /// that extending or relocating a run keeps its identity.
    pub fn hash(&self) -> String {
        let mut identity = self.clone();
        identity.run.budget = 0;
        identity.run.eval_runs = 0;
        identity.run.output_dir.clear();
        let digest = Sha256::digest(identity.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        let dir = PathBuf::from(&self.run.output_dir);
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }

    /// Settings of the desk-scale pursuit experiment: the scaled arena
    /// with a compact model and the tuned learner.
    pub fn desk_experiment(seed: u64) -> Self {
        let mut env = EnvConfig::desk_scale();
        env.reward.w_bnd = 0.0;
        env.queue.lambda = 0.0;
        let model = ModelConfig { d_model: 32, d_ff: 64, n_blocks_enc: 1, n_blocks_dec: 1, ..ModelConfig::default() };
        let train = Hyperparams {
            lr: 3e-4,
            clip: 0.2,
            value_target: crate::learner::ValueTarget::LambdaReturn,
            ..Hyperparams::default()
        };
        Self {
            run: RunSection { seed, output_dir: format!("runs/desk-{seed}"), ..RunSection::default() },
            env,
            model,
            train,
        }
    }
}
