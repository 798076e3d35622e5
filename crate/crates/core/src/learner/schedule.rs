//! Self-play schedules and the success-gated curriculum.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Hyperparams, LearnerError, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelfPlayMode {
    /// Pursuers against the scripted random-impulse evader.
    #[default]
    Random,
    /// An evader trained against homing pursuers, then frozen.
    Pretrained,
    /// Pursuer and evader policies trained in alternation.
    Game,
}

impl FromStr for SelfPlayMode {
    type Err = LearnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "pretrained" => Ok(Self::Pretrained),
            "game" => Ok(Self::Game),
            other => Err(LearnerError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for SelfPlayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Pretrained => "pretrained",
            Self::Game => "game",
        })
    }
}

/// What one rollout round trains and against whom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Round {
    pub learner: Role,
    /// `true` when the opposing team is driven by its policy rather than a
    /// scripted controller.
    pub opponent_policy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPlan {
    pub mode: SelfPlayMode,
    pub n_alt: usize,
    pub pretrain_steps: u64,
}

impl TrainingPlan {
    pub fn needs_evader(&self) -> bool {
        self.mode != SelfPlayMode::Random
    }

    /// Round `index` given the evader training steps done so far.
    pub fn round(&self, index: u64, evader_steps: u64) -> Round {
        match self.mode {
            SelfPlayMode::Random => Round { learner: Role::Pursuer, opponent_policy: false },
            SelfPlayMode::Pretrained if evader_steps < self.pretrain_steps => {
                Round { learner: Role::Evader, opponent_policy: false }
            }
            SelfPlayMode::Pretrained => Round { learner: Role::Pursuer, opponent_policy: true },
            SelfPlayMode::Game => {
                let learner = if (index / self.n_alt as u64).is_multiple_of(2) { Role::Pursuer } else { Role::Evader };
                Round { learner, opponent_policy: true }
            }
        }
    }
}

pub fn selfplay_schedule(mode: &str, hyper: &Hyperparams) -> Result<TrainingPlan, LearnerError> {
    Ok(TrainingPlan { mode: mode.parse()?, n_alt: hyper.n_alt.max(1), pretrain_steps: hyper.pretrain_steps })
}

/// Training stage. Stages advance on windowed success rates and never
/// go back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// Pursuit episodes while success is rare.
    Explore = 1,
    /// Pursuit episodes converging to the success threshold.
    Pursue = 2,
    /// Attachment enabled after capture.
    Attach = 3,
    /// Attachment succeeding often enough to refine.
    Refine = 4,
}

impl Stage {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(Self::Explore),
            2 => Some(Self::Pursue),
            3 => Some(Self::Attach),
            4 => Some(Self::Refine),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curriculum {
    stage: Stage,
    window: VecDeque<bool>,
    capacity: usize,
    threshold: f64,
    explore_fraction: f64,
    refine_threshold: f64,
    /// Whether the configuration allows attachment at all.
    attachment_allowed: bool,
}

impl Curriculum {
    pub fn new(hyper: &Hyperparams, attachment_allowed: bool) -> Self {
        Self {
            stage: Stage::Explore,
            window: VecDeque::with_capacity(hyper.curriculum_window),
            capacity: hyper.curriculum_window,
            threshold: hyper.curriculum_threshold,
            explore_fraction: hyper.explore_fraction,
            refine_threshold: hyper.refine_threshold,
            attachment_allowed,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn attachment_enabled(&self) -> bool {
        self.stage >= Stage::Attach
    }

    pub fn set_attachment_allowed(&mut self, allowed: bool) {
        self.attachment_allowed = allowed;
    }

    pub fn history(&self) -> impl Iterator<Item = bool> + '_ {
        self.window.iter().copied()
    }

    /// Restores a saved stage and success window.
    pub fn restore(&mut self, stage: Stage, history: impl IntoIterator<Item = bool>) {
        self.stage = stage;
        self.window.clear();
        for h in history {
            self.push(h);
        }
    }

    fn push(&mut self, success: bool) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(success);
    }

    /// Success rate over the window, `None` until the window is full.
    pub fn rate(&self) -> Option<f64> {
        (self.window.len() == self.capacity)
            .then(|| self.window.iter().filter(|&&s| s).count() as f64 / self.capacity as f64)
    }

    /// Success rate over however many episodes are in the window.
    pub fn partial_rate(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64
        }
    }

    /// Records one pursuer-training episode. The tracked success is
    /// capture in stages 1–2 and full attachment in stages 3–4. Returns the
    /// new stage on a transition.
    pub fn record(&mut self, captured: bool, attached: bool) -> Option<Stage> {
        self.push(if self.attachment_enabled() { attached } else { captured });
        let rate = self.rate()?;
        let next = match self.stage {
            Stage::Explore if rate >= self.explore_fraction * self.threshold => Stage::Pursue,
            Stage::Pursue if rate >= self.threshold && self.attachment_allowed => Stage::Attach,
            Stage::Attach if rate >= self.refine_threshold => Stage::Refine,
            _ => return None,
        };
        self.stage = next;
        self.window.clear();
        Some(next)
    }
}
