//! Operational shell: run configuration, checkpoints, row exports and the
//! `train` / `evaluate` / `simulate` / `verify` commands.

pub mod checkpoint;
mod commands;
mod config;
pub mod rows;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, NamedArray};
pub use commands::{
    cmd_evaluate, cmd_simulate, cmd_train, cmd_verify, latest_checkpoint, load_policies, read_checkpoint,
    BaselinePolicy, EvaluateSummary, PolicySource, TrainSummary, CHECKPOINT_DIR, EVAL_DIR, PRETRAINED_EVADER,
};
pub use config::{RunConfig, RunSection, OUTPUT_ROOT_VAR};

use crate::env::EnvError;
use crate::eval::EvalError;
use crate::learner::LearnerError;
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint {}: {source}", path.display())]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("malformed output file {}: {detail}", path.display())]
    Rows { path: PathBuf, detail: String },
    #[error("verification failed: {0}")]
    Verify(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl RuntimeError {
    /// 1 for configuration and usage errors, 2 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}
