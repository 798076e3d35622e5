//! Clipped on-policy learner: rollout collection, advantage estimation,
//! the combined encoder/decoder/expert objective, target tracking and the
//! self-play schedule.

mod gae;
mod normalize;
mod rollout;
mod schedule;
mod trainer;
mod update;

pub use gae::{compute_gae, normalize};
pub use normalize::{RewardScaler, RunningStat};
pub use rollout::{
    collect_rollouts, prepare_batch, EnvPool, EpisodeSummary, Opponent, Role, RolloutBatch, Sample, Trajectory,
};
pub use schedule::{selfplay_schedule, Curriculum, Round, SelfPlayMode, Stage, TrainingPlan};
pub use trainer::{AgentState, Trainer, TrainerEvent, UpdateRow};
pub use update::{
    combined_loss, decoder_loss, encoder_loss, soft_update, update, LossParts, MiniBatch, TargetParams, UpdateMetrics,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid hyperparameters: {0}")]
    Config(String),
    #[error("non-finite {what} at update {update}: {detail}")]
    NonFinite { what: &'static str, update: u64, detail: String },
    #[error("unknown self-play mode `{0}`")]
    UnknownMode(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Regression target of the value head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueTarget {
    /// One-step `r + γ·V_target(s′)` through the lagged value head.
    #[default]
    Bellman,
    /// The GAE return `Â + V`, which propagates sparse rewards faster.
    LambdaReturn,
}

/// Learner settings. Serialized keys follow the hyperparameter table
/// symbols where one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    #[serde(rename = "alpha")]
    pub lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    #[serde(rename = "epsilon")]
    pub clip: f64,
    /// Mini-batch size in samples (one sample is a joint step).
    #[serde(rename = "e")]
    pub batch: usize,
    /// Rollout store capacity in transitions.
    #[serde(rename = "B")]
    pub buffer: usize,
    /// Soft target-update factor applied after every optimizer step.
    #[serde(rename = "eta")]
    pub eta_soft: f64,
    /// Target update rate. Documented but unused unless
    /// `hard_update_interval` is set.
    pub tau: f64,
    /// Optional hard copy of the value head into the target every N updates.
    pub hard_update_interval: Option<u64>,
    pub value_target: ValueTarget,
    pub ppo_epochs: usize,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Weight of the expert-collapse regularizer.
    pub eta_reg: f64,
    pub eps_reg: f64,
    /// Parallel environments per rollout round.
    pub n_envs: usize,
    /// Transitions per environment per rollout round.
    pub rollout_len: usize,
    /// Windowed success rate that advances the curriculum.
    pub curriculum_threshold: f64,
    pub curriculum_window: usize,
    /// Fraction of the threshold that ends the exploration stage.
    pub explore_fraction: f64,
    /// Success rate in the attachment stage that starts refinement.
    pub refine_threshold: f64,
    /// Rollout rounds per side before the adversarial game swaps learners.
    pub n_alt: usize,
    /// Environment steps of evader training in the pretrained schedule.
    pub pretrain_steps: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.05,
            batch: 64,
            buffer: 50_000,
            eta_soft: 0.001,
            tau: 0.002,
            hard_update_interval: None,
            value_target: ValueTarget::Bellman,
            ppo_epochs: 4,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            eta_reg: 0.01,
            eps_reg: 1e-8,
            n_envs: 16,
            rollout_len: 128,
            curriculum_threshold: 0.6,
            curriculum_window: 100,
            explore_fraction: 0.5,
            refine_threshold: 0.3,
            n_alt: 5,
            pretrain_steps: 100_000,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |s: &str| Err(LearnerError::Config(s.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(0.0..=1.0).contains(&self.eta_soft) {
            return bad("eta must lie in [0, 1]");
        }
        if self.batch == 0 || self.ppo_epochs == 0 || self.n_envs == 0 || self.rollout_len == 0 {
            return bad("e, ppo_epochs, n_envs and rollout_len must be positive");
        }
        if self.n_envs * self.rollout_len > self.buffer {
            return bad("n_envs × rollout_len exceeds the buffer capacity B");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        if self.eta_reg < 0.0 || self.eps_reg < 0.0 || self.entropy_coef < 0.0 {
            return bad("eta_reg, eps_reg and entropy_coef must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.curriculum_threshold)
            || !(0.0..=1.0).contains(&self.explore_fraction)
            || !(0.0..=1.0).contains(&self.refine_threshold)
        {
            return bad("curriculum thresholds must lie in [0, 1]");
        }
        if self.curriculum_window == 0 || self.n_alt == 0 {
            return bad("curriculum_window and n_alt must be positive");
        }
        Ok(())
    }

    /// Transitions collected per rollout round.
    pub fn round_steps(&self) -> usize {
        self.n_envs * self.rollout_len
    }
}

#[cfg(test)]
mod tests;
