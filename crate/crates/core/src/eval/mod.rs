//! Monte Carlo evaluation, fuel and timing accounting, scalability sweeps
//! and the advantage-decomposition verifier.

mod decomposition;
mod stats;

pub use decomposition::{orderings, verify_decomposition, DecompositionReport, ToyGame, MAX_ACTIONS, MAX_AGENTS};
pub use stats::{
    collision_curve, head_tail_means, incomplete_fraction, mass_preserving_smooth, median, normal_sf, two_proportion_z,
    wilson_interval, CollisionCurve, ProportionTest, COLLISION_WINDOW, Z_95,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::controller::{homing_team, DEFAULT_BANDWIDTH};
use crate::env::{EnvConfig, EnvError, EvaderKind, JointAction, ObservationLayout, Outcome, SwarmEnv, TaskPhase};
use crate::orbit::{ControlAccel, LvlhState};
use crate::policy::{ObservationWindow, Policy, PolicyError, Sampling};
use crate::seed::{rng_for, Stream};

const M_PER_KM: f64 = 1000.0;
/// Episodes stepped together through one batched policy call.
const CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("policy layout does not fit the scenario: {0}")]
    Layout(String),
    #[error("{pursuers}v{evaders} exceeds the layout capacity {m_max}v{k_max}")]
    Capacity { pursuers: usize, evaders: usize, m_max: usize, k_max: usize },
    #[error("toy game with {agents} agents and up to {max_actions} actions is too large to enumerate")]
    TooLarge { agents: usize, max_actions: usize },
    #[error("trajectory step {step} has {got} acceleration records, expected {expected}")]
    MissingAccelerations { step: usize, expected: usize, got: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Who flies the pursuers.
#[derive(Debug, Clone, Copy)]
pub enum PursuerControl<'a> {
    Policy(&'a Policy),
    /// Uniform random thrust per axis within the bound.
    Random,
    /// Proportional-derivative homing on the assigned evader.
    Homing,
    Zero,
}

/// Who flies the evaders.
#[derive(Debug, Clone, Copy)]
pub enum EvaderControl<'a> {
    /// The environment's configured evader.
    Scripted,
    Policy(&'a Policy),
}

/// Per-episode outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub index: usize,
    pub seed: u64,
    pub steps: usize,
    /// The pursuit phase ended in capture.
    pub pursuit_success: bool,
    /// The episode ended in success (attachment, or capture when the
    /// attachment phase is disabled).
    pub attachment_success: bool,
    /// Time of capture (s).
    pub capture_time: Option<f64>,
    /// Time of success (s), `+∞` for failed runs.
    pub completion_time: f64,
    pub outcome: &'static str,
    pub pursuer_return: f64,
    pub collisions: usize,
    pub boundary_exits: usize,
    /// Δv per agent (m/s), pursuers then evaders.
    pub delta_v: Vec<f64>,
    pub pursuers: usize,
}

impl EpisodeRecord {
    pub fn pursuer_delta_v(&self) -> f64 {
        self.delta_v[..self.pursuers].iter().sum()
    }
}

/// One recorded step: the state at time `t` and the thrust applied from it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub phase: TaskPhase,
    /// Pursuers then evaders.
    pub states: Vec<LvlhState>,
    pub accels: Vec<ControlAccel>,
    /// Pursuer team reward earned by the step.
    pub reward: f64,
    pub captured: bool,
    pub attached: bool,
    pub collisions: Vec<(usize, usize)>,
    pub boundary_exits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub dt: f64,
    pub pursuers: usize,
    pub evaders: usize,
    pub steps: Vec<TraceStep>,
}

/// Aggregate success statistics of a run set.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessStats {
    pub n_runs: usize,
    pub pursuit_successes: usize,
    pub attachment_successes: usize,
    /// `None` when `n_runs = 0`.
    pub pursuit_success_rate: Option<f64>,
    pub attachment_success_rate: Option<f64>,
    /// Wilson 95% interval half-widths.
    pub pursuit_half_width: Option<f64>,
    pub attachment_half_width: Option<f64>,
    /// Over successful runs (s).
    pub mean_completion_time: Option<f64>,
    pub median_completion_time: Option<f64>,
}

impl SuccessStats {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len();
        let ps = records.iter().filter(|r| r.pursuit_success).count();
        let att = records.iter().filter(|r| r.attachment_success).count();
        let rate = |k: usize| (n > 0).then(|| k as f64 / n as f64);
        let half = |k: usize| wilson_interval(k, n, Z_95).map(|(lo, hi)| 0.5 * (hi - lo));
        let times: Vec<f64> = records.iter().map(|r| r.completion_time).filter(|t| t.is_finite()).collect();
        Self {
            n_runs: n,
            pursuit_successes: ps,
            attachment_successes: att,
            pursuit_success_rate: rate(ps),
            attachment_success_rate: rate(att),
            pursuit_half_width: half(ps),
            attachment_half_width: half(att),
            mean_completion_time: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
            median_completion_time: median(&times),
        }
    }

    /// Rates are defined only for a non-empty run set.
    pub fn is_defined(&self) -> bool {
        self.n_runs > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub stats: SuccessStats,
    pub episodes: Vec<EpisodeRecord>,
}

/// Per-agent and team Δv of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FuelReport {
    /// Δv per agent (m/s), pursuers then evaders.
    pub per_agent: Vec<f64>,
    /// Sum over pursuers (m/s).
    pub team_total: f64,
}

/// `Δv_i = Σ_t ‖a_i(t)‖·Δt`, in m/s.
pub fn fuel_accounting(trace: &EpisodeTrace) -> Result<FuelReport, EvalError> {
    let n = trace.pursuers + trace.evaders;
    let mut per_agent = vec![0.0; n];
    for (step, s) in trace.steps.iter().enumerate() {
        if s.accels.len() != n {
            return Err(EvalError::MissingAccelerations { step, expected: n, got: s.accels.len() });
        }
        for (dv, a) in per_agent.iter_mut().zip(&s.accels) {
            *dv += a.norm() * trace.dt * M_PER_KM;
        }
    }
    let team_total = per_agent[..trace.pursuers].iter().sum();
    Ok(FuelReport { per_agent, team_total })
}

/// Seed of evaluation episode `index`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    rng_for(seed, Stream::Evaluation, index as u64).gen()
}

/// Fails unless `policy` reads the observation layout of `role` in `env`.
pub fn check_layout(policy: &Policy, env: &EnvConfig, evader: bool) -> Result<(), EvalError> {
    let layout = if evader {
        ObservationLayout::evader(env.m_max, env.k_max)
    } else {
        ObservationLayout::pursuer(env.m_max, env.k_max)
    };
    let model = policy.config();
    if model.m_max != env.m_max || model.k_max != env.k_max || policy.obs_dim() != layout.dim() {
        return Err(EvalError::Layout(format!(
            "model {}x{} reading {} features, scenario layout {}x{} with {} features",
            model.m_max,
            model.k_max,
            policy.obs_dim(),
            env.m_max,
            env.k_max,
            layout.dim()
        )));
    }
    Ok(())
}

fn check_capacity(env: &EnvConfig) -> Result<(), EvalError> {
    if env.pursuers > env.m_max || env.evaders > env.k_max || env.pursuers == 0 || env.evaders == 0 {
        return Err(EvalError::Capacity {
            pursuers: env.pursuers,
            evaders: env.evaders,
            m_max: env.m_max,
            k_max: env.k_max,
        });
    }
    Ok(())
}

struct Seat {
    env: SwarmEnv,
    seed: u64,
    order: Vec<usize>,
    pursuer_window: ObservationWindow,
    evader_window: ObservationWindow,
    rng: ChaCha8Rng,
    done: bool,
    record: EpisodeRecord,
    trace: Option<EpisodeTrace>,
}

impl Seat {
    fn new(
        config: &EnvConfig,
        window: usize,
        random_order: bool,
        index: usize,
        seed: u64,
        opts: RunOptions,
    ) -> Result<Self, EvalError> {
        let mut env = SwarmEnv::new(config.clone())?;
        let mut obs = env.reset(seed)?;
        if opts.evaders_at_origin {
            let p = env.pursuer_states().to_vec();
            obs = env.reset_to(p, vec![LvlhState::ZERO; config.evaders], seed)?;
        }
        let mut order: Vec<usize> = (0..config.pursuers).collect();
        if random_order {
            order.shuffle(&mut rng_for(seed, Stream::Shuffle, 0));
        }
        let frame: Vec<Vec<f64>> = order.iter().map(|&i| obs.pursuers[i].clone()).collect();
        Ok(Self {
            pursuer_window: ObservationWindow::repeat(window, &frame)?,
            evader_window: ObservationWindow::repeat(window, &obs.evaders)?,
            env,
            seed,
            order,
            rng: rng_for(seed, Stream::Baseline, 0),
            done: false,
            record: EpisodeRecord {
                index,
                seed,
                steps: 0,
                pursuit_success: false,
                attachment_success: false,
                capture_time: None,
                completion_time: f64::INFINITY,
                outcome: "pursuit",
                pursuer_return: 0.0,
                collisions: 0,
                boundary_exits: 0,
                delta_v: vec![0.0; config.pursuers + config.evaders],
                pursuers: config.pursuers,
            },
            trace: opts.record_traces.then(|| EpisodeTrace {
                dt: config.dt,
                pursuers: config.pursuers,
                evaders: config.evaders,
                steps: Vec::new(),
            }),
        })
    }
}

/// Decoded unit actions for every active seat's pursuers, in agent order.
fn pursuer_units(
    control: PursuerControl<'_>,
    seats: &mut [&mut Seat],
    sampling: Sampling,
) -> Result<Vec<Vec<ControlAccel>>, EvalError> {
    let mut out = Vec::with_capacity(seats.len());
    match control {
        PursuerControl::Policy(policy) => {
            let decoded = act_policy(policy, seats, sampling, false)?;
            for (seat, acts) in seats.iter().zip(decoded) {
                let a = seat.env.config().a_max_p;
                let mut v = vec![ControlAccel::ZERO; acts.len()];
                for (slot, &agent) in seat.order.iter().enumerate() {
                    v[agent] = ControlAccel::from_array(acts[slot].map(|u| u * a));
                }
                out.push(v);
            }
        }
        PursuerControl::Random => {
            for seat in seats.iter_mut() {
                let a = seat.env.config().a_max_p;
                let m = seat.env.config().pursuers;
                let rng = &mut seat.rng;
                out.push(
                    (0..m)
                        .map(|_| ControlAccel::from_array(std::array::from_fn(|_| rng.gen_range(-1.0..=1.0) * a)))
                        .collect(),
                );
            }
        }
        PursuerControl::Homing => {
            for seat in seats.iter() {
                let env = &seat.env;
                out.push(homing_team(
                    env.pursuer_states(),
                    env.evader_states(),
                    DEFAULT_BANDWIDTH,
                    env.config().a_max_p,
                ));
            }
        }
        PursuerControl::Zero => {
            for seat in seats.iter() {
                out.push(vec![ControlAccel::ZERO; seat.env.config().pursuers]);
            }
        }
    }
    Ok(out)
}

fn act_policy(
    policy: &Policy,
    seats: &mut [&mut Seat],
    sampling: Sampling,
    evader: bool,
) -> Result<Vec<Vec<[f64; 3]>>, EvalError> {
    let window = |s: &Seat| {
        if evader {
            s.evader_window.clone()
        } else {
            s.pursuer_window.clone()
        }
    };
    let tasks: Vec<usize> = seats.iter().map(|s| s.env.phase().task_index()).collect();
    match sampling {
        Sampling::Deterministic => {
            let windows: Vec<ObservationWindow> = seats.iter().map(|s| window(s)).collect();
            let refs: Vec<&ObservationWindow> = windows.iter().collect();
            let mut unused = rng_for(0, Stream::Sampling, 0);
            let (acts, _) = policy.act_batch(&refs, &tasks, sampling, &mut unused)?;
            Ok(acts.into_iter().map(|a| a.into_iter().map(|x| x.unit).collect()).collect())
        }
        // Per-episode streams keep stochastic results independent of how
        // episodes are grouped into batches.
        Sampling::Stochastic => seats
            .iter_mut()
            .zip(tasks)
            .map(|(s, task)| {
                let w = window(s);
                let mut rng = rng_for(s.seed, Stream::Sampling, (s.record.steps as u64) << 1 | evader as u64);
                let (acts, _) = policy.act_batch(&[&w], &[task], sampling, &mut rng)?;
                Ok(acts[0].iter().map(|x| x.unit).collect())
            })
            .collect(),
    }
}

/// Steps every seat to the end of its episode.
fn run_chunk(
    seats: &mut [Seat],
    pursuers: PursuerControl<'_>,
    evader: EvaderControl<'_>,
    sampling: Sampling,
) -> Result<(), EvalError> {
    loop {
        let mut active: Vec<&mut Seat> = seats.iter_mut().filter(|s| !s.done).collect();
        if active.is_empty() {
            return Ok(());
        }
        let p_accels = pursuer_units(pursuers, &mut active, sampling)?;
        let e_accels: Option<Vec<Vec<ControlAccel>>> = match evader {
            EvaderControl::Scripted => None,
            EvaderControl::Policy(policy) => {
                let units = act_policy(policy, &mut active, sampling, true)?;
                Some(
                    active
                        .iter()
                        .zip(units)
                        .map(|(s, u)| {
                            let b = s.env.config().evader_bound();
                            u.into_iter().map(|x| ControlAccel::from_array(x.map(|c| c * b))).collect()
                        })
                        .collect(),
                )
            }
        };
        for (i, seat) in active.iter_mut().enumerate() {
            let pre_states: Vec<LvlhState> =
                seat.env.pursuer_states().iter().chain(seat.env.evader_states()).copied().collect();
            let pre_phase = seat.env.phase();
            let joint = JointAction { pursuers: p_accels[i].clone(), evaders: e_accels.as_ref().map(|e| e[i].clone()) };
            let r = seat.env.step(&joint)?;
            let rec = &mut seat.record;
            rec.steps += 1;
            let t = rec.steps as f64 * seat.env.config().dt;
            rec.pursuer_return += r.reward;
            rec.collisions += r.info.events.collisions.len();
            rec.boundary_exits += r.info.events.boundary_exits.len();
            for (dv, s) in rec.delta_v.iter_mut().zip(&r.info.delta_v) {
                *dv += s * M_PER_KM;
            }
            if r.info.captured && rec.capture_time.is_none() {
                rec.pursuit_success = true;
                rec.capture_time = Some(t);
            }
            if let Some(trace) = seat.trace.as_mut() {
                trace.steps.push(TraceStep {
                    t: rec.steps - 1,
                    phase: pre_phase,
                    states: pre_states,
                    accels: r.info.accels.clone(),
                    reward: r.reward,
                    captured: r.info.captured,
                    attached: r.info.attached,
                    collisions: r.info.events.collisions.clone(),
                    boundary_exits: r.info.events.boundary_exits.clone(),
                });
            }
            if r.done {
                seat.done = true;
                rec.outcome = r.phase.label();
                if r.phase == TaskPhase::Done(Outcome::Success) {
                    rec.attachment_success = true;
                    rec.completion_time = t;
                }
            } else {
                let frame: Vec<Vec<f64>> = seat.order.iter().map(|&k| r.observations.pursuers[k].clone()).collect();
                seat.pursuer_window.push(&frame)?;
                seat.evader_window.push(&r.observations.evaders)?;
            }
        }
    }
}

/// Episode-runner switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub record_traces: bool,
    /// Moves every evader to the origin at rest after the seeded reset.
    pub evaders_at_origin: bool,
}

/// Runs the episodes with the given seeds and returns their records and,
/// when requested, full traces.
pub fn run_episodes(
    env: &EnvConfig,
    pursuers: PursuerControl<'_>,
    evader: EvaderControl<'_>,
    seeds: &[u64],
    sampling: Sampling,
    opts: RunOptions,
) -> Result<Vec<(EpisodeRecord, Option<EpisodeTrace>)>, EvalError> {
    check_capacity(env)?;
    let (window, random_order) = match (pursuers, evader) {
        (PursuerControl::Policy(p), _) | (_, EvaderControl::Policy(p)) => (p.config().window, p.config().random_order),
        _ => (1, false),
    };
    if let PursuerControl::Policy(p) = pursuers {
        check_layout(p, env, false)?;
    }
    if let EvaderControl::Policy(p) = evader {
        check_layout(p, env, true)?;
        if p.config().window != window {
            return Err(EvalError::Layout("pursuer and evader policies use different history windows".into()));
        }
    }
    let mut out = Vec::with_capacity(seeds.len());
    for (c, chunk) in seeds.chunks(CHUNK).enumerate() {
        let mut seats = chunk
            .iter()
            .enumerate()
            .map(|(i, &s)| Seat::new(env, window, random_order, c * CHUNK + i, s, opts))
            .collect::<Result<Vec<_>, _>>()?;
        run_chunk(&mut seats, pursuers, evader, sampling)?;
        out.extend(seats.into_iter().map(|s| (s.record, s.trace)));
    }
    Ok(out)
}

/// `n_runs` seeded episodes; deterministic policy actions unless
/// `sampling` says otherwise.
pub fn monte_carlo(
    env: &EnvConfig,
    pursuers: PursuerControl<'_>,
    evader: EvaderControl<'_>,
    n_runs: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<MonteCarlo, EvalError> {
    let seeds: Vec<u64> = (0..n_runs).map(|i| episode_seed(seed, i)).collect();
    let episodes: Vec<EpisodeRecord> = run_episodes(env, pursuers, evader, &seeds, sampling, RunOptions::default())?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    Ok(MonteCarlo { stats: SuccessStats::from_records(&episodes), episodes })
}

/// Homing pursuers against evaders frozen at the origin: every run must
/// end in capture.
pub fn sanity_scenario(env: &EnvConfig, n_runs: usize, seed: u64) -> Result<MonteCarlo, EvalError> {
    let env = EnvConfig { evader_policy: EvaderKind::Passive, ..env.clone() };
    let seeds: Vec<u64> = (0..n_runs).map(|i| episode_seed(seed, i)).collect();
    let opts = RunOptions { evaders_at_origin: true, ..RunOptions::default() };
    let episodes: Vec<EpisodeRecord> =
        run_episodes(&env, PursuerControl::Homing, EvaderControl::Scripted, &seeds, Sampling::Deterministic, opts)?
            .into_iter()
            .map(|(r, _)| r)
            .collect();
    Ok(MonteCarlo { stats: SuccessStats::from_records(&episodes), episodes })
}

/// One Monte Carlo result per team size.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub pursuers: usize,
    pub evaders: usize,
    pub result: MonteCarlo,
}

/// Evaluates the same controllers across team sizes without rebuilding
/// the model. Every size is checked against the layout capacity first.
pub fn scalability_sweep(
    base: &EnvConfig,
    pursuers: PursuerControl<'_>,
    evader: EvaderControl<'_>,
    sizes: &[(usize, usize)],
    n_runs: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<Vec<SweepRow>, EvalError> {
    let configs: Vec<EnvConfig> =
        sizes.iter().map(|&(m, k)| EnvConfig { pursuers: m, evaders: k, ..base.clone() }).collect();
    for c in &configs {
        check_capacity(c)?;
    }
    configs
        .into_iter()
        .map(|c| {
            let result = monte_carlo(&c, pursuers, evader, n_runs, seed, sampling)?;
            Ok(SweepRow { pursuers: c.pursuers, evaders: c.evaders, result })
        })
        .collect()
}
