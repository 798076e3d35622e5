//! `train`, `evaluate`, `simulate` and `verify`.

use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::{layout_hash, load_policy, restore_trainer, trainer_checkpoint, Checkpoint};
use super::rows::{opt, RowWriter, Schema};
use super::{RunConfig, RuntimeError};
use crate::env::ObservationLayout;
use crate::eval::{
    episode_seed, fuel_accounting, incomplete_fraction, run_episodes, EpisodeRecord, EpisodeTrace, EvaderControl,
    PursuerControl, RunOptions, SuccessStats,
};
use crate::learner::{SelfPlayMode, Trainer, TrainerEvent, TrainingPlan};
use crate::policy::{Policy, Sampling};
use crate::seed::{rng_for, Stream};
use crate::verify::{run_all, CheckReport};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const EVAL_DIR: &str = "eval";
pub const PRETRAINED_EVADER: &str = "pretrained-evader.ckpt";

fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:012}.ckpt"))
}

fn checkpoint_step(path: &Path) -> Option<u64> {
    path.file_name()?.to_str()?.strip_prefix("step-")?.strip_suffix(".ckpt")?.parse().ok()
}

/// Highest-step checkpoint in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>, RuntimeError> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(dir).map_err(RuntimeError::io(dir))? {
        let path = entry.map_err(RuntimeError::io(dir))?.path();
        if let Some(step) = checkpoint_step(&path) {
            if best.as_ref().is_none_or(|(s, _)| step > *s) {
                best = Some((step, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Writes through a temporary file so a crash never leaves a torn
/// checkpoint under its final name.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RuntimeError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(RuntimeError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(RuntimeError::io(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, RuntimeError> {
    let bytes = fs::read(path).map_err(RuntimeError::io(path))?;
    Checkpoint::decode(&bytes).map_err(|source| RuntimeError::Checkpoint { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<(), RuntimeError> {
    fs::create_dir_all(path).map_err(RuntimeError::io(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub env_steps: u64,
    pub rounds: u64,
    pub resumed_from: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

fn round_of(r: &csv::StringRecord) -> Option<u64> {
    r.get(0)?.parse().ok()
}

/// Trains to `cfg.run.budget` environment steps, resuming from the latest
/// checkpoint in the output directory. Every checkpoint restarts the
/// environments, so a resumed run reproduces an uninterrupted one.
pub fn cmd_train(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<TrainSummary, RuntimeError> {
    cfg.validate()?;
    let out = cfg.output_dir();
    let ck_dir = out.join(CHECKPOINT_DIR);
    create_dir(&ck_dir)?;
    let config_path = out.join("config.toml");
    fs::write(&config_path, cfg.to_toml()).map_err(RuntimeError::io(&config_path))?;
    let hash = cfg.hash();

    let mut trainer =
        Trainer::new(cfg.env.clone(), cfg.model.clone(), cfg.train.clone(), cfg.run.scenario, cfg.run.seed)?;
    let mut checkpoints = Vec::new();
    let resumed_from = latest_checkpoint(&ck_dir)?;
    let metrics_path = out.join(Schema::TrainMetrics.file_name());
    let episodes_path = out.join(Schema::TrainEpisodes.file_name());
    let (mut metrics, mut episodes) = match &resumed_from {
        Some(path) => {
            let ck = read_checkpoint(path)?;
            restore_trainer(&mut trainer, &ck)
                .map_err(|source| RuntimeError::Checkpoint { path: path.clone(), source })?;
            let done = trainer.rounds;
            let keep = |r: &csv::StringRecord| round_of(r).is_some_and(|k| k < done);
            log(&format!("resuming from {} at step {}", path.display(), trainer.env_steps));
            (
                RowWriter::resume(&metrics_path, Schema::TrainMetrics, &hash, keep)?,
                RowWriter::resume(&episodes_path, Schema::TrainEpisodes, &hash, keep)?,
            )
        }
        None => {
            let path = checkpoint_path(&ck_dir, 0);
            write_atomic(&path, &trainer_checkpoint(&trainer).encode())?;
            checkpoints.push(path);
            (
                RowWriter::create(&metrics_path, Schema::TrainMetrics, &hash)?,
                RowWriter::create(&episodes_path, Schema::TrainEpisodes, &hash)?,
            )
        }
    };

    let interval = cfg.run.checkpoint_interval;
    let budget = cfg.run.budget;
    let mut next_checkpoint = (trainer.env_steps / interval + 1) * interval;
    while trainer.env_steps < budget {
        let mut round = trainer.rounds;
        let mut failure: Option<RuntimeError> = None;
        let mut pretrain_done = false;
        let mut stage_change = None;
        let mut sink = |ev: TrainerEvent<'_>| {
            let res = match ev {
                TrainerEvent::Episode { summary: s, role, stage, env_steps } => episodes.write([
                    round.to_string(),
                    env_steps.to_string(),
                    role.label().to_string(),
                    stage.index().to_string(),
                    s.seed.to_string(),
                    s.steps.to_string(),
                    s.pursuer_return.to_string(),
                    s.evader_return.to_string(),
                    s.collisions.to_string(),
                    s.boundary_exits.to_string(),
                    s.capture_step.map(|c| c.to_string()).unwrap_or_default(),
                    s.success.to_string(),
                    s.outcome.to_string(),
                    s.attachment.to_string(),
                    s.pursuer_delta_v.to_string(),
                    s.evader_delta_v.to_string(),
                ]),
                TrainerEvent::Update(row) => {
                    round = row.round + 1;
                    let m = &row.metrics;
                    metrics.write([
                        row.round.to_string(),
                        row.env_steps.to_string(),
                        row.role.label().to_string(),
                        row.stage.index().to_string(),
                        m.encoder_loss.to_string(),
                        m.decoder_loss.to_string(),
                        m.reg_loss.to_string(),
                        m.entropy_bonus.to_string(),
                        m.total_loss.to_string(),
                        m.entropy.to_string(),
                        m.grad_norm.to_string(),
                        m.approx_kl.to_string(),
                        m.clip_fraction.to_string(),
                        row.mean_reward.to_string(),
                        row.episodes.to_string(),
                        row.capture_rate.to_string(),
                        row.success_rate.to_string(),
                        row.collisions_per_episode.to_string(),
                        row.delta_v.to_string(),
                    ])
                }
                TrainerEvent::StageChange(stage) => {
                    stage_change = Some(stage);
                    Ok(())
                }
                TrainerEvent::PretrainComplete => {
                    pretrain_done = true;
                    Ok(())
                }
            };
            if let (Err(e), None) = (res, &failure) {
                failure = Some(e);
            }
        };
        let result = trainer.run_round(&mut sink);
        if let Some(e) = failure {
            return Err(e);
        }
        if let Err(e) = result {
            metrics.flush()?;
            episodes.flush()?;
            return Err(e.into());
        }
        if let Some(stage) = stage_change {
            log(&format!("step {}: curriculum stage {}", trainer.env_steps, stage.index()));
        }
        if pretrain_done {
            let path = ck_dir.join(PRETRAINED_EVADER);
            write_atomic(&path, &trainer_checkpoint(&trainer).encode())?;
            log(&format!("step {}: evader pretraining complete", trainer.env_steps));
        }
        if trainer.env_steps >= next_checkpoint || trainer.env_steps >= budget {
            metrics.flush()?;
            episodes.flush()?;
            trainer.restart_pool()?;
            let path = checkpoint_path(&ck_dir, trainer.env_steps);
            write_atomic(&path, &trainer_checkpoint(&trainer).encode())?;
            log(&format!("step {}: checkpoint {}", trainer.env_steps, path.display()));
            checkpoints.push(path);
            next_checkpoint = (trainer.env_steps / interval + 1) * interval;
        }
    }
    metrics.flush()?;
    episodes.flush()?;
    Ok(TrainSummary {
        env_steps: trainer.env_steps,
        rounds: trainer.rounds,
        resumed_from,
        checkpoints,
        output_dir: out,
    })
}

/// Policies described by `cfg`, with parameters from `ck` after the
/// layout hash has been checked.
pub fn load_policies(cfg: &RunConfig, ck: &Checkpoint, path: &Path) -> Result<(Policy, Option<Policy>), RuntimeError> {
    let (m, k) = (cfg.env.m_max, cfg.env.k_max);
    let mut rng = rng_for(cfg.run.seed, Stream::Init, 0);
    let mut pursuer = Policy::new(cfg.model.clone(), ObservationLayout::pursuer(m, k).dim(), &mut rng)?;
    let plan =
        TrainingPlan { mode: cfg.run.scenario, n_alt: cfg.train.n_alt, pretrain_steps: cfg.train.pretrain_steps };
    let mut evader = if plan.needs_evader() {
        Some(Policy::new(cfg.model.clone(), ObservationLayout::evader(m, k).dim(), &mut rng)?)
    } else {
        None
    };
    let wrap = |source| RuntimeError::Checkpoint { path: path.to_path_buf(), source };
    ck.verify_layout(&layout_hash(&pursuer, evader.as_ref())).map_err(wrap)?;
    load_policy(&mut pursuer, "pursuer", ck).map_err(wrap)?;
    if let Some(e) = evader.as_mut() {
        load_policy(e, "evader", ck).map_err(wrap)?;
    }
    Ok((pursuer, evader))
}

fn sampling(cfg: &RunConfig) -> Sampling {
    if cfg.run.stochastic_eval {
        Sampling::Stochastic
    } else {
        Sampling::Deterministic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub stats: SuccessStats,
    pub episodes: Vec<EpisodeRecord>,
    /// Team Δv per episode from the applied thrust (m/s).
    pub team_delta_v: Vec<f64>,
    pub output_dir: PathBuf,
}

/// Monte Carlo evaluation of a checkpoint: aggregate statistics,
/// per-episode rows and the incomplete-fraction curve.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path, runs: Option<usize>) -> Result<EvaluateSummary, RuntimeError> {
    cfg.validate()?;
    let ck = read_checkpoint(checkpoint)?;
    let (pursuer, evader) = load_policies(cfg, &ck, checkpoint)?;
    let evader_control = match (&evader, cfg.run.scenario) {
        (Some(e), SelfPlayMode::Pretrained | SelfPlayMode::Game) => EvaderControl::Policy(e),
        _ => EvaderControl::Scripted,
    };
    let n = runs.unwrap_or(cfg.run.eval_runs);
    let seeds: Vec<u64> = (0..n).map(|i| episode_seed(cfg.run.seed, i)).collect();
    let opts = RunOptions { record_traces: true, ..RunOptions::default() };
    let results =
        run_episodes(&cfg.env, PursuerControl::Policy(&pursuer), evader_control, &seeds, sampling(cfg), opts)?;

    let out = cfg.output_dir().join(EVAL_DIR);
    create_dir(&out)?;
    let hash = cfg.hash();
    let mut rows = RowWriter::create(&out.join(Schema::EvalEpisodes.file_name()), Schema::EvalEpisodes, &hash)?;
    let mut records = Vec::with_capacity(results.len());
    let mut team_delta_v = Vec::with_capacity(results.len());
    for (rec, trace) in results {
        let trace: EpisodeTrace = trace.expect("traces were requested");
        let fuel = fuel_accounting(&trace)?;
        rows.write([
            rec.index.to_string(),
            rec.seed.to_string(),
            rec.steps.to_string(),
            rec.pursuit_success.to_string(),
            rec.attachment_success.to_string(),
            opt(rec.capture_time),
            rec.completion_time.to_string(),
            rec.outcome.to_string(),
            rec.pursuer_return.to_string(),
            rec.collisions.to_string(),
            rec.boundary_exits.to_string(),
            fuel.team_total.to_string(),
            fuel.per_agent.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        ])?;
        team_delta_v.push(fuel.team_total);
        records.push(rec);
    }
    rows.flush()?;

    let stats = SuccessStats::from_records(&records);
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, c) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
        (c > 0).then(|| s / c as f64)
    };
    let mut w = RowWriter::create(&out.join(Schema::EvalStats.file_name()), Schema::EvalStats, &hash)?;
    w.write([
        cfg.env.pursuers.to_string(),
        cfg.env.evaders.to_string(),
        stats.n_runs.to_string(),
        stats.pursuit_successes.to_string(),
        stats.attachment_successes.to_string(),
        opt(stats.pursuit_success_rate),
        opt(stats.pursuit_half_width),
        opt(stats.attachment_success_rate),
        opt(stats.attachment_half_width),
        opt(stats.mean_completion_time),
        opt(stats.median_completion_time),
        opt(mean(&mut records.iter().map(|r| r.collisions as f64))),
        opt(mean(&mut team_delta_v.iter().copied())),
    ])?;
    w.flush()?;

    if !records.is_empty() {
        let grid: Vec<f64> = (0..=cfg.env.horizon).map(|s| s as f64 * cfg.env.dt).collect();
        let times: Vec<f64> = records.iter().map(|r| r.completion_time).collect();
        let frac = incomplete_fraction(&times, &grid)?;
        let mut w = RowWriter::create(&out.join(Schema::Incomplete.file_name()), Schema::Incomplete, &hash)?;
        for (t, f) in grid.iter().zip(frac) {
            w.write([t.to_string(), f.to_string()])?;
        }
        w.flush()?;
    }
    Ok(EvaluateSummary { stats, episodes: records, team_delta_v, output_dir: out })
}

/// Fixed controllers available to `simulate` without a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselinePolicy {
    /// Uniform random thrust on every axis.
    Random,
    Zero,
    /// The proportional-derivative homing controller.
    Homing,
}

impl std::str::FromStr for BaselinePolicy {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "zero" => Ok(Self::Zero),
            "homing" => Ok(Self::Homing),
            other => Err(RuntimeError::Config(format!("unknown policy `{other}` (expected random, zero or homing)"))),
        }
    }
}

/// Where `simulate` gets its pursuer controller.
#[derive(Debug, Clone, Copy)]
pub enum PolicySource<'a> {
    Checkpoint(&'a Path),
    Baseline(BaselinePolicy),
}

fn events_field(step: &crate::eval::TraceStep) -> String {
    let mut ev = Vec::new();
    if step.captured {
        ev.push("capture".to_string());
    }
    if step.attached {
        ev.push("attach".to_string());
    }
    ev.extend(step.collisions.iter().map(|(i, j)| format!("collision:{i}-{j}")));
    ev.extend(step.boundary_exits.iter().map(|i| format!("boundary:{i}")));
    ev.join("|")
}

/// Rolls `episodes` episodes and writes one trajectory row per agent per
/// step. Returns the trajectory file path.
pub fn cmd_simulate(cfg: &RunConfig, source: PolicySource<'_>, episodes: usize) -> Result<PathBuf, RuntimeError> {
    cfg.validate()?;
    let loaded = match source {
        PolicySource::Checkpoint(path) => Some(load_policies(cfg, &read_checkpoint(path)?, path)?),
        PolicySource::Baseline(_) => None,
    };
    let (pursuers, evader) = match (&loaded, source) {
        (Some((p, e)), _) => (
            PursuerControl::Policy(p),
            match (e, cfg.run.scenario) {
                (Some(e), SelfPlayMode::Pretrained | SelfPlayMode::Game) => EvaderControl::Policy(e),
                _ => EvaderControl::Scripted,
            },
        ),
        (None, PolicySource::Baseline(BaselinePolicy::Random)) => (PursuerControl::Random, EvaderControl::Scripted),
        (None, PolicySource::Baseline(BaselinePolicy::Zero)) => (PursuerControl::Zero, EvaderControl::Scripted),
        (None, _) => (PursuerControl::Homing, EvaderControl::Scripted),
    };
    let seeds: Vec<u64> = (0..episodes).map(|i| episode_seed(cfg.run.seed, i)).collect();
    let opts = RunOptions { record_traces: true, ..RunOptions::default() };
    let results = run_episodes(&cfg.env, pursuers, evader, &seeds, sampling(cfg), opts)?;

    let out = cfg.output_dir();
    create_dir(&out)?;
    let path = out.join(Schema::Trajectory.file_name());
    let mut w = RowWriter::create(&path, Schema::Trajectory, &cfg.hash())?;
    for (rec, trace) in results {
        let trace = trace.expect("traces were requested");
        for step in &trace.steps {
            let t = step.t as f64 * trace.dt;
            let events = events_field(step);
            for (agent, (s, a)) in step.states.iter().zip(&step.accels).enumerate() {
                let role = if agent < trace.pursuers { "pursuer" } else { "evader" };
                let mut row = vec![rec.index.to_string(), t.to_string(), agent.to_string(), role.to_string()];
                row.extend(s.to_array().iter().map(f64::to_string));
                row.extend(a.to_array().iter().map(f64::to_string));
                row.push(step.reward.to_string());
                row.push(step.phase.label().to_string());
                row.push(events.clone());
                w.write(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(path)
}

/// Runs every oracle suite.
pub fn cmd_verify(seed: u64) -> Vec<CheckReport> {
    run_all(seed)
}
