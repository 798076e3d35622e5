//! Multi-pursuer, multi-evader pursuit-attachment arena in the LVLH frame.

pub mod config;
pub mod controller;
pub mod evader;
pub mod events;
pub mod observation;
pub mod reward;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{CaptureRule, EnvConfig, QueueParams, RewardWeights};
pub use evader::{scripted_evader, EvaderKind};
pub use events::{detect_events, EventGeometry, EventSet};
pub use observation::{ObservationLayout, LAYOUT_VERSION};
pub use reward::{compute_reward, RewardBreakdown, RewardEvents, RewardInput};

use crate::orbit::{ControlAccel, DiscreteTransition, DynamicsError, LvlhState, OrbitParams};
use crate::queue::{greedy_offload, update_queue, QueueError, QueueState, SensedLoad};
use crate::seed::{rng_for, Stream};
use observation::{observe, ObservationInput};

const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("cannot place {agents} agents {separation_km} km apart inside a ±{half_extent_km} km box")]
    Infeasible { agents: usize, separation_km: f64, half_extent_km: f64 },
    #[error("episode is over; reset before stepping")]
    Done,
    #[error("expected {expected} {role} actions, got {got}")]
    ActionShape { role: &'static str, expected: usize, got: usize },
    #[error("non-finite action for {role} {index}")]
    NonFiniteAction { role: &'static str, index: usize },
    #[error("unknown evader policy `{0}`")]
    UnknownEvader(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureCause {
    Timeout,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure(FailureCause),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskPhase {
    Pursuit,
    Attachment,
    Done(Outcome),
}

impl TaskPhase {
    pub fn is_done(&self) -> bool {
        matches!(self, Self::Done(_))
    }

    /// Index of the task query: 0 for pursuit, 1 for attachment.
    pub fn task_index(&self) -> usize {
        match self {
            Self::Attachment => 1,
            _ => 0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Pursuit => "pursuit",
            Self::Attachment => "attachment",
            Self::Done(Outcome::Success) => "success",
            Self::Done(Outcome::Failure(FailureCause::Timeout)) => "timeout",
            Self::Done(Outcome::Failure(FailureCause::Boundary)) => "boundary",
        }
    }
}

/// Per-agent thrust commands. When `evaders` is `None` the configured
/// scripted evader acts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointAction {
    pub pursuers: Vec<ControlAccel>,
    pub evaders: Option<Vec<ControlAccel>>,
}

impl JointAction {
    pub fn pursuers(pursuers: Vec<ControlAccel>) -> Self {
        Self { pursuers, evaders: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    pub pursuers: Vec<Vec<f64>>,
    pub evaders: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    pub events: EventSet,
    /// Capture counted this step (phase switch or success without attachment).
    pub captured: bool,
    pub attached: bool,
    pub phase_changed: bool,
    /// Applied accelerations after clipping, pursuers then evaders.
    pub accels: Vec<ControlAccel>,
    /// Δv spent this step per agent (km/s), pursuers then evaders.
    pub delta_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: JointObservation,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub done: bool,
    pub phase: TaskPhase,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct SwarmEnv {
    config: EnvConfig,
    orbit: OrbitParams,
    transition: DiscreteTransition,
    geometry: EventGeometry,
    pursuer_layout: ObservationLayout,
    evader_layout: ObservationLayout,
    pursuers: Vec<LvlhState>,
    evaders: Vec<LvlhState>,
    attached: Vec<bool>,
    queue: QueueState,
    phase: TaskPhase,
    t: usize,
    evader_rng: ChaCha8Rng,
}

impl SwarmEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let orbit = config.orbit()?;
        let transition = crate::orbit::state_transition(&orbit, config.dt)?;
        Ok(Self {
            geometry: EventGeometry::from_config(&config),
            pursuer_layout: ObservationLayout::pursuer(config.m_max, config.k_max),
            evader_layout: ObservationLayout::evader(config.m_max, config.k_max),
            pursuers: vec![LvlhState::ZERO; config.pursuers],
            evaders: vec![LvlhState::ZERO; config.evaders],
            attached: vec![false; config.evaders],
            queue: QueueState::empty(config.pursuers, config.evaders),
            phase: TaskPhase::Pursuit,
            t: 0,
            evader_rng: rng_for(0, Stream::Evader, 0),
            orbit,
            transition,
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Enables or disables the attachment stage for subsequent episodes.
    pub fn set_attachment(&mut self, enabled: bool) {
        self.config.attachment = enabled;
    }

    pub fn orbit(&self) -> &OrbitParams {
        &self.orbit
    }

    pub fn pursuer_layout(&self) -> ObservationLayout {
        self.pursuer_layout
    }

    pub fn evader_layout(&self) -> ObservationLayout {
        self.evader_layout
    }

    pub fn pursuer_states(&self) -> &[LvlhState] {
        &self.pursuers
    }

    pub fn evader_states(&self) -> &[LvlhState] {
        &self.evaders
    }

    pub fn queue(&self) -> &QueueState {
        &self.queue
    }

    pub fn phase(&self) -> TaskPhase {
        self.phase
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Places every agent uniformly in the box at rest, at least
    /// `10·r_pe` from every other agent.
    pub fn reset(&mut self, seed: u64) -> Result<JointObservation, EnvError> {
        let mut rng = rng_for(seed, Stream::EnvReset, 0);
        let n = self.config.pursuers + self.config.evaders;
        let sep = self.config.placement_separation_km();
        let l = self.config.half_extent;
        let mut placed: Vec<[f64; 3]> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut ok = false;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-l..=l));
                if placed.iter().all(|q| crate::orbit::norm3(std::array::from_fn(|a| p[a] - q[a])) >= sep) {
                    placed.push(p);
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(EnvError::Infeasible { agents: n, separation_km: sep, half_extent_km: l });
            }
        }
        let states: Vec<LvlhState> = placed.into_iter().map(|p| LvlhState::from_pos_vel(p, [0.0; 3])).collect();
        let (p, e) = states.split_at(self.config.pursuers);
        self.reset_to(p.to_vec(), e.to_vec(), seed)
    }

    /// Starts an episode from explicit states.
    pub fn reset_to(
        &mut self,
        pursuers: Vec<LvlhState>,
        evaders: Vec<LvlhState>,
        seed: u64,
    ) -> Result<JointObservation, EnvError> {
        if pursuers.len() != self.config.pursuers || evaders.len() != self.config.evaders {
            return Err(EnvError::Config(format!(
                "expected {} pursuer and {} evader states, got {} and {}",
                self.config.pursuers,
                self.config.evaders,
                pursuers.len(),
                evaders.len()
            )));
        }
        if pursuers.iter().chain(&evaders).any(|s| !s.is_finite()) {
            return Err(DynamicsError::NonFinite("initial state").into());
        }
        self.pursuers = pursuers;
        self.evaders = evaders;
        self.attached = vec![false; self.config.evaders];
        self.queue = QueueState::empty(self.config.pursuers, self.config.evaders);
        self.phase = TaskPhase::Pursuit;
        self.t = 0;
        self.evader_rng = rng_for(seed, Stream::Evader, 0);
        Ok(self.observations())
    }

    pub fn observations(&self) -> JointObservation {
        let time_left = (self.config.horizon - self.t.min(self.config.horizon)) as f64 / self.config.horizon as f64;
        let pursuers = (0..self.pursuers.len())
            .map(|i| {
                observe(
                    &self.pursuer_layout,
                    &ObservationInput {
                        index: i,
                        team: &self.pursuers,
                        others: &self.evaders,
                        load: self.queue.load(i),
                        phase: self.phase,
                        time_left,
                        half_extent: self.config.half_extent,
                    },
                )
            })
            .collect();
        let evaders = (0..self.evaders.len())
            .map(|i| {
                observe(
                    &self.evader_layout,
                    &ObservationInput {
                        index: i,
                        team: &self.evaders,
                        others: &self.pursuers,
                        load: 0.0,
                        phase: self.phase,
                        time_left,
                        half_extent: self.config.half_extent,
                    },
                )
            })
            .collect();
        JointObservation { pursuers, evaders }
    }

    pub fn step(&mut self, actions: &JointAction) -> Result<StepResult, EnvError> {
        if self.phase.is_done() {
            return Err(EnvError::Done);
        }
        let c = &self.config;
        if actions.pursuers.len() != c.pursuers {
            return Err(EnvError::ActionShape { role: "pursuer", expected: c.pursuers, got: actions.pursuers.len() });
        }
        if let Some((index, _)) = actions.pursuers.iter().enumerate().find(|(_, a)| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction { role: "pursuer", index });
        }
        let evader_bound = c.evader_bound();
        let evader_accels: Vec<ControlAccel> = match &actions.evaders {
            Some(ev) => {
                if ev.len() != c.evaders {
                    return Err(EnvError::ActionShape { role: "evader", expected: c.evaders, got: ev.len() });
                }
                if let Some((index, _)) = ev.iter().enumerate().find(|(_, a)| !a.is_finite()) {
                    return Err(EnvError::NonFiniteAction { role: "evader", index });
                }
                ev.iter().map(|a| a.clipped(evader_bound)).collect()
            }
            None => {
                let rng = &mut self.evader_rng;
                self.evaders
                    .iter()
                    .map(|e| scripted_evader(c.evader_policy, e, &self.pursuers, c.p_imp, evader_bound, rng))
                    .collect()
            }
        };
        let pursuer_accels: Vec<ControlAccel> = actions.pursuers.iter().map(|a| a.clipped(c.a_max_p)).collect();

        let prev_pursuers = self.pursuers.clone();
        let prev_evaders = self.evaders.clone();
        let assignment = events::assign(&prev_pursuers, &prev_evaders, &self.attached);

        let v_max = c.v_max;
        let advance = |s: &LvlhState, a: &ControlAccel| {
            let mut n = self.transition.apply(s, a);
            let speed = n.speed();
            if speed > v_max {
                let k = v_max / speed;
                n.set_velocity(n.velocity().map(|v| v * k));
            }
            n
        };
        let next_pursuers: Vec<LvlhState> =
            prev_pursuers.iter().zip(&pursuer_accels).map(|(s, a)| advance(s, a)).collect();
        let mut next_evaders: Vec<LvlhState> =
            prev_evaders.iter().zip(&evader_accels).map(|(s, a)| advance(s, a)).collect();
        if next_pursuers.iter().chain(&next_evaders).any(|s| !s.is_finite()) {
            return Err(DynamicsError::NonFinite("propagated state").into());
        }
        let wall_hits: Vec<bool> = next_evaders.iter_mut().map(|s| reflect(s, c.half_extent)).collect();

        let positions: Vec<[f64; 3]> = next_pursuers.iter().map(LvlhState::position).collect();
        let targets: Vec<[f64; 3]> = next_evaders.iter().map(LvlhState::position).collect();
        let sensed = SensedLoad::from_positions(&positions, &targets, c.queue.s0, c.queue.rho_sense);
        let offload = greedy_offload(&self.queue, c.queue.offload_threshold);
        let queue = update_queue(&self.queue, &offload, &sensed, c.queue.c_local)?;

        let ev = detect_events(&next_pursuers, &next_evaders, &self.attached, &wall_hits, &self.geometry);
        let phase_before = self.phase;
        let mut reward_events = RewardEvents {
            collisions: ev.collisions.len(),
            boundary_exits: ev.boundary_exits.len(),
            ..RewardEvents::default()
        };
        let mut next_phase = phase_before;
        match phase_before {
            TaskPhase::Pursuit if ev.capture => {
                reward_events.capture = true;
                next_phase = if c.attachment { TaskPhase::Attachment } else { TaskPhase::Done(Outcome::Success) };
            }
            TaskPhase::Attachment if ev.attachment_success => {
                reward_events.attachment = true;
                next_phase = TaskPhase::Done(Outcome::Success);
            }
            _ => {}
        }
        if !ev.boundary_exits.is_empty() {
            next_phase = TaskPhase::Done(Outcome::Failure(FailureCause::Boundary));
        }
        let breakdown = compute_reward(
            c,
            &RewardInput {
                phase: phase_before,
                prev_pursuers: &prev_pursuers,
                prev_evaders: &prev_evaders,
                next_pursuers: &next_pursuers,
                next_evaders: &next_evaders,
                pursuer_accels: &pursuer_accels,
                evader_accels: &evader_accels,
                assignment: &assignment,
                attached: &self.attached,
                events: reward_events,
                queue: &queue,
            },
        );

        if phase_before == TaskPhase::Attachment {
            self.attached = ev.attached.clone();
        }
        self.t += 1;
        if self.t >= c.horizon && !next_phase.is_done() {
            next_phase = TaskPhase::Done(Outcome::Failure(FailureCause::Timeout));
        }
        let dt = c.dt;
        let accels: Vec<ControlAccel> = pursuer_accels.into_iter().chain(evader_accels).collect();
        let delta_v = accels.iter().map(|a| a.norm() * dt).collect();
        self.pursuers = next_pursuers;
        self.evaders = next_evaders;
        self.queue = queue;
        self.phase = next_phase;

        Ok(StepResult {
            observations: self.observations(),
            reward: breakdown.total,
            breakdown,
            done: next_phase.is_done(),
            phase: next_phase,
            info: StepInfo {
                captured: reward_events.capture,
                attached: reward_events.attachment,
                phase_changed: next_phase != phase_before,
                events: ev,
                accels,
                delta_v,
            },
        })
    }
}

/// Mirrors a state back into the box, reversing the offending velocity
/// components. Returns whether any wall was hit.
fn reflect(s: &mut LvlhState, l: f64) -> bool {
    let mut hit = false;
    let mut p = s.position();
    let mut v = s.velocity();
    for a in 0..3 {
        if p[a] > l {
            p[a] = 2.0 * l - p[a];
            v[a] = -v[a];
            hit = true;
        } else if p[a] < -l {
            p[a] = -2.0 * l - p[a];
            v[a] = -v[a];
            hit = true;
        }
    }
    if hit {
        *s = LvlhState::from_pos_vel(p, v);
    }
    hit
}
