//! Lock-step rollout collection over a pool of seeded environments.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{compute_gae, normalize, Hyperparams, LearnerError, RewardScaler, ValueTarget};
use crate::env::controller::{homing_team, DEFAULT_BANDWIDTH};
use crate::env::{EnvConfig, JointAction, JointObservation, Outcome, StepResult, SwarmEnv, TaskPhase};
use crate::orbit::ControlAccel;
use crate::policy::{AgentAction, ObservationWindow, Policy, Sampling};
use crate::seed::{child_seed, rng_for, Stream};

const M_PER_KM: f64 = 1000.0;
const VALUE_CHUNK: usize = 256;

/// Which team a learner controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Pursuer,
    Evader,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Pursuer => "pursuer",
            Role::Evader => "evader",
        }
    }
}

/// Controller of the team the learner does not control.
#[derive(Debug, Clone, Copy)]
pub enum Opponent<'a> {
    /// The environment's scripted evader, or homing pursuers when the
    /// learner is the evader.
    Scripted,
    Policy(&'a Policy),
}

/// Outcome of one finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub env: usize,
    pub seed: u64,
    pub steps: usize,
    /// Unscaled team reward summed over the episode.
    pub pursuer_return: f64,
    pub evader_return: f64,
    pub collisions: usize,
    pub boundary_exits: usize,
    /// Step at which capture happened, if it did.
    pub capture_step: Option<usize>,
    pub success: bool,
    pub outcome: &'static str,
    /// Whether the attachment stage was enabled for this episode.
    pub attachment: bool,
    /// Pursuer team Δv (m/s).
    pub pursuer_delta_v: f64,
    pub evader_delta_v: f64,
}

impl EpisodeSummary {
    pub fn captured(&self) -> bool {
        self.capture_step.is_some()
    }
}

#[derive(Debug, Clone, Default)]
struct EpisodeAccumulator {
    steps: usize,
    pursuer_return: f64,
    evader_return: f64,
    collisions: usize,
    boundary_exits: usize,
    capture_step: Option<usize>,
    pursuer_delta_v: f64,
    evader_delta_v: f64,
}

/// Independent environments stepped together, each with its own episode
/// counter and observation windows.
#[derive(Debug, Clone)]
pub struct EnvPool {
    envs: Vec<SwarmEnv>,
    root: u64,
    window: usize,
    random_order: bool,
    episodes: Vec<u64>,
    seeds: Vec<u64>,
    orders: Vec<Vec<usize>>,
    pursuer_windows: Vec<ObservationWindow>,
    evader_windows: Vec<ObservationWindow>,
    acc: Vec<EpisodeAccumulator>,
}

impl EnvPool {
    pub fn new(
        config: &EnvConfig,
        n_envs: usize,
        window: usize,
        root: u64,
        random_order: bool,
    ) -> Result<Self, LearnerError> {
        let mut pool = Self {
            envs: Vec::with_capacity(n_envs),
            root,
            window,
            random_order,
            episodes: vec![0; n_envs],
            seeds: vec![0; n_envs],
            orders: vec![Vec::new(); n_envs],
            pursuer_windows: Vec::with_capacity(n_envs),
            evader_windows: Vec::with_capacity(n_envs),
            acc: vec![EpisodeAccumulator::default(); n_envs],
        };
        for e in 0..n_envs {
            pool.envs.push(SwarmEnv::new(config.clone())?);
            let empty = ObservationWindow::from_data(window, 1, 1, vec![0.0; window])?;
            pool.pursuer_windows.push(empty.clone());
            pool.evader_windows.push(empty);
            pool.start_episode(e)?;
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[SwarmEnv] {
        &self.envs
    }

    pub fn set_attachment(&mut self, enabled: bool) {
        for env in &mut self.envs {
            env.set_attachment(enabled);
        }
    }

    fn start_episode(&mut self, e: usize) -> Result<(), LearnerError> {
        let seed = child_seed(child_seed(self.root, e as u64), self.episodes[e]);
        self.episodes[e] += 1;
        self.seeds[e] = seed;
        let obs = self.envs[e].reset(seed)?;
        let m = self.envs[e].config().pursuers;
        let mut order: Vec<usize> = (0..m).collect();
        if self.random_order {
            order.shuffle(&mut rng_for(seed, Stream::Shuffle, 0));
        }
        self.orders[e] = order;
        self.pursuer_windows[e] = ObservationWindow::repeat(self.window, &self.pursuer_frame(e, &obs))?;
        self.evader_windows[e] = ObservationWindow::repeat(self.window, &obs.evaders)?;
        self.acc[e] = EpisodeAccumulator::default();
        Ok(())
    }

    fn pursuer_frame(&self, e: usize, obs: &JointObservation) -> Vec<Vec<f64>> {
        self.orders[e].iter().map(|&i| obs.pursuers[i].clone()).collect()
    }

    fn windows(&self, role: Role) -> &[ObservationWindow] {
        match role {
            Role::Pursuer => &self.pursuer_windows,
            Role::Evader => &self.evader_windows,
        }
    }

    fn tasks(&self) -> Vec<usize> {
        self.envs.iter().map(|e| e.phase().task_index()).collect()
    }

    /// Maps decoded unit actions of team `role` in env `e` to accelerations.
    fn accels(&self, e: usize, role: Role, acts: &[AgentAction]) -> Vec<ControlAccel> {
        let c = self.envs[e].config();
        match role {
            Role::Pursuer => {
                let mut out = vec![ControlAccel::default(); acts.len()];
                for (slot, &agent) in self.orders[e].iter().enumerate() {
                    out[agent] = ControlAccel::from_array(acts[slot].unit.map(|u| u * c.a_max_p));
                }
                out
            }
            Role::Evader => {
                let b = c.evader_bound();
                acts.iter().map(|a| ControlAccel::from_array(a.unit.map(|u| u * b))).collect()
            }
        }
    }

    fn record(&mut self, e: usize, r: &StepResult) -> Option<EpisodeSummary> {
        let c = self.envs[e].config();
        let m = c.pursuers;
        let attachment = c.attachment;
        let acc = &mut self.acc[e];
        acc.steps += 1;
        acc.pursuer_return += r.reward;
        acc.evader_return += r.breakdown.evader;
        acc.collisions += r.info.events.collisions.len();
        acc.boundary_exits += r.info.events.boundary_exits.len();
        if r.info.captured && acc.capture_step.is_none() {
            acc.capture_step = Some(acc.steps);
        }
        acc.pursuer_delta_v += r.info.delta_v[..m].iter().sum::<f64>() * M_PER_KM;
        acc.evader_delta_v += r.info.delta_v[m..].iter().sum::<f64>() * M_PER_KM;
        if !r.done {
            return None;
        }
        Some(EpisodeSummary {
            env: e,
            seed: self.seeds[e],
            steps: acc.steps,
            pursuer_return: acc.pursuer_return,
            evader_return: acc.evader_return,
            collisions: acc.collisions,
            boundary_exits: acc.boundary_exits,
            capture_step: acc.capture_step,
            success: r.phase == TaskPhase::Done(Outcome::Success),
            outcome: r.phase.label(),
            attachment,
            pursuer_delta_v: acc.pursuer_delta_v,
            evader_delta_v: acc.evader_delta_v,
        })
    }
}

/// One stored joint step of the learning team.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: ObservationWindow,
    pub task: usize,
    pub actions: Vec<AgentAction>,
    /// Scaled team reward.
    pub reward: f64,
    pub raw_reward: f64,
    pub done: bool,
    /// Per-agent values at collection time.
    pub values: Vec<f64>,
    /// Normalized joint advantage, filled by [`prepare_batch`].
    pub advantage: f64,
    /// Joint return target, filled by [`prepare_batch`].
    pub ret: f64,
    /// Per-agent Bellman targets `r + γ(1−done)·V_target(next)`, filled by
    /// [`prepare_batch`].
    pub value_targets: Vec<f64>,
}

/// Contiguous run of samples from one environment, possibly spanning
/// several episodes separated by done flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: usize,
    pub len: usize,
    /// Window after the last stored step.
    pub final_window: ObservationWindow,
    pub final_task: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub role: Role,
    pub samples: Vec<Sample>,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutBatch {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn agents(&self) -> usize {
        self.samples.first().map_or(0, |s| s.actions.len())
    }
}

/// Runs `steps_per_env` lock-step transitions in every environment with
/// the learner acting for `role`. Finished episodes restart immediately.
pub fn collect_rollouts<R: Rng + ?Sized>(
    pool: &mut EnvPool,
    role: Role,
    learner: &Policy,
    opponent: Opponent<'_>,
    steps_per_env: usize,
    sampling: Sampling,
    scaler: &mut RewardScaler,
    rng: &mut R,
) -> Result<(RolloutBatch, Vec<EpisodeSummary>), LearnerError> {
    let n_envs = pool.len();
    if scaler.returns.len() != n_envs {
        return Err(LearnerError::Shape(format!(
            "reward scaler tracks {} envs, pool has {n_envs}",
            scaler.returns.len()
        )));
    }
    let mut per_env: Vec<Vec<Sample>> = vec![Vec::with_capacity(steps_per_env); n_envs];
    let mut episodes = Vec::new();
    for _ in 0..steps_per_env {
        let tasks = pool.tasks();
        let refs: Vec<&ObservationWindow> = pool.windows(role).iter().collect();
        let (acts, values) = learner.act_batch(&refs, &tasks, sampling, rng)?;
        let other = match role {
            Role::Pursuer => Role::Evader,
            Role::Evader => Role::Pursuer,
        };
        let opponent_acts = match opponent {
            Opponent::Policy(p) => {
                let refs: Vec<&ObservationWindow> = pool.windows(other).iter().collect();
                Some(p.act_batch(&refs, &tasks, sampling, rng)?.0)
            }
            Opponent::Scripted => None,
        };
        let mut raw = Vec::with_capacity(n_envs);
        let mut dones = Vec::with_capacity(n_envs);
        let mut results = Vec::with_capacity(n_envs);
        for e in 0..n_envs {
            let mine = pool.accels(e, role, &acts[e]);
            let theirs = opponent_acts.as_ref().map(|o| pool.accels(e, other, &o[e]));
            let joint = match role {
                Role::Pursuer => JointAction { pursuers: mine, evaders: theirs },
                Role::Evader => {
                    let env = &pool.envs[e];
                    let pursuers = theirs.unwrap_or_else(|| {
                        homing_team(env.pursuer_states(), env.evader_states(), DEFAULT_BANDWIDTH, env.config().a_max_p)
                    });
                    JointAction { pursuers, evaders: Some(mine) }
                }
            };
            let r = pool.envs[e].step(&joint)?;
            raw.push(match role {
                Role::Pursuer => r.reward,
                Role::Evader => r.breakdown.evader,
            });
            dones.push(r.done);
            results.push(r);
        }
        let scaled = scaler.process(&raw, &dones);
        for (e, r) in results.into_iter().enumerate() {
            per_env[e].push(Sample {
                window: pool.windows(role)[e].clone(),
                task: tasks[e],
                actions: acts[e].clone(),
                reward: scaled[e],
                raw_reward: raw[e],
                done: r.done,
                values: values[e].clone(),
                advantage: 0.0,
                ret: 0.0,
                value_targets: Vec::new(),
            });
            if let Some(summary) = pool.record(e, &r) {
                episodes.push(summary);
                pool.start_episode(e)?;
            } else {
                let frame = pool.pursuer_frame(e, &r.observations);
                pool.pursuer_windows[e].push(&frame)?;
                pool.evader_windows[e].push(&r.observations.evaders)?;
            }
        }
    }
    let mut samples = Vec::with_capacity(n_envs * steps_per_env);
    let mut trajectories = Vec::new();
    let tasks = pool.tasks();
    for (e, s) in per_env.into_iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        trajectories.push(Trajectory {
            start: samples.len(),
            len: s.len(),
            final_window: pool.windows(role)[e].clone(),
            final_task: tasks[e],
        });
        samples.extend(s);
    }
    Ok((RolloutBatch { role, samples, trajectories }, episodes))
}

fn chunked_values(policy: &Policy, windows: &[&ObservationWindow]) -> Result<Vec<Vec<f64>>, LearnerError> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(VALUE_CHUNK) {
        out.extend(policy.values_batch(chunk)?);
    }
    Ok(out)
}

/// Fills advantages, returns and Bellman targets.
///
/// `policy` supplies bootstrap values for unfinished trajectories and
/// `target_policy` the lagged next-step values of the encoder targets.
pub fn prepare_batch(
    batch: &mut RolloutBatch,
    policy: &Policy,
    target_policy: &Policy,
    hyper: &Hyperparams,
) -> Result<(), LearnerError> {
    if batch.is_empty() {
        return Ok(());
    }
    let finals: Vec<&ObservationWindow> = batch.trajectories.iter().map(|t| &t.final_window).collect();
    let bootstrap = chunked_values(policy, &finals)?;
    for (traj, boot) in batch.trajectories.iter().zip(&bootstrap) {
        let s = &batch.samples[traj.start..traj.start + traj.len];
        let rewards: Vec<f64> = s.iter().map(|x| x.reward).collect();
        let values: Vec<f64> = s.iter().map(|x| mean(&x.values)).collect();
        let dones: Vec<bool> = s.iter().map(|x| x.done).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, mean(boot), hyper.gamma, hyper.gae_lambda)?;
        for (i, x) in batch.samples[traj.start..traj.start + traj.len].iter_mut().enumerate() {
            x.advantage = adv[i];
            x.ret = ret[i];
        }
    }
    let mut adv: Vec<f64> = batch.samples.iter().map(|x| x.advantage).collect();
    if adv.iter().any(|a| !a.is_finite()) {
        return Err(LearnerError::NonFinite {
            what: "advantage",
            update: 0,
            detail: "GAE produced a non-finite value".into(),
        });
    }
    normalize(&mut adv);
    for (x, a) in batch.samples.iter_mut().zip(adv) {
        x.advantage = a;
    }

    let n = batch.agents();
    if hyper.value_target == ValueTarget::LambdaReturn {
        for x in batch.samples.iter_mut() {
            x.value_targets = vec![x.ret; n];
        }
        return Ok(());
    }

    // Next windows of live steps: the following sample of the same
    // trajectory, or the trajectory's final window.
    let mut next_of: Vec<Option<usize>> = vec![None; batch.samples.len()];
    let mut next_windows: Vec<&ObservationWindow> = Vec::new();
    for traj in &batch.trajectories {
        for i in traj.start..traj.start + traj.len {
            if batch.samples[i].done {
                continue;
            }
            next_of[i] = Some(next_windows.len());
            next_windows.push(if i + 1 < traj.start + traj.len {
                &batch.samples[i + 1].window
            } else {
                &traj.final_window
            });
        }
    }
    let next_values = chunked_values(target_policy, &next_windows)?;
    for (x, idx) in batch.samples.iter_mut().zip(next_of) {
        x.value_targets = match idx {
            Some(j) => next_values[j].iter().map(|v| x.reward + hyper.gamma * v).collect(),
            None => vec![x.reward; n],
        };
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}
