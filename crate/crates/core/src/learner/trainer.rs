//! Round-based training driver tying rollouts, updates, curriculum and
//! self-play together.

use super::{
    collect_rollouts, prepare_batch, update, Curriculum, EnvPool, EpisodeSummary, Hyperparams, LearnerError, Opponent,
    RewardScaler, Role, SelfPlayMode, Stage, TargetParams, TrainingPlan, UpdateMetrics,
};
use crate::env::{EnvConfig, ObservationLayout};
use crate::nn::RmsProp;
use crate::policy::{ModelConfig, Policy, Sampling};
use crate::seed::{child_seed, rng_for, Stream};

/// Everything one team's learner owns.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub policy: Policy,
    pub optimizer: RmsProp,
    pub target: TargetParams,
    pub scaler: RewardScaler,
    pub updates: u64,
}

impl AgentState {
    pub fn new(
        model: &ModelConfig,
        obs_dim: usize,
        hyper: &Hyperparams,
        seed: u64,
        index: u64,
    ) -> Result<Self, LearnerError> {
        let policy = Policy::new(model.clone(), obs_dim, &mut rng_for(seed, Stream::Init, index))?;
        Ok(Self {
            optimizer: RmsProp::new(policy.store(), hyper.lr),
            target: TargetParams::from_policy(&policy),
            scaler: RewardScaler::new(hyper.n_envs, hyper.gamma),
            updates: 0,
            policy,
        })
    }
}

/// Per-round training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRow {
    pub round: u64,
    pub env_steps: u64,
    pub role: Role,
    pub stage: Stage,
    pub metrics: UpdateMetrics,
    /// Unscaled learner reward per transition.
    pub mean_reward: f64,
    pub episodes: usize,
    /// Capture rate among episodes finished this round.
    pub capture_rate: f64,
    /// Full-success rate among episodes finished this round.
    pub success_rate: f64,
    pub collisions_per_episode: f64,
    /// Mean pursuer team Δv per finished episode (m/s).
    pub delta_v: f64,
}

#[derive(Debug)]
pub enum TrainerEvent<'a> {
    Episode {
        summary: &'a EpisodeSummary,
        role: Role,
        stage: Stage,
        env_steps: u64,
    },
    Update(&'a UpdateRow),
    StageChange(Stage),
    /// The pretrained schedule has frozen its evader.
    PretrainComplete,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub env_config: EnvConfig,
    pub model: ModelConfig,
    pub hyper: Hyperparams,
    pub plan: TrainingPlan,
    pub seed: u64,
    pub pursuer: AgentState,
    pub evader: Option<AgentState>,
    pub curriculum: Curriculum,
    pub env_steps: u64,
    pub evader_steps: u64,
    pub rounds: u64,
    pub episodes: u64,
    pool: EnvPool,
}

impl Trainer {
    pub fn new(
        env_config: EnvConfig,
        model: ModelConfig,
        hyper: Hyperparams,
        mode: SelfPlayMode,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        hyper.validate()?;
        if model.m_max != env_config.m_max || model.k_max != env_config.k_max {
            return Err(LearnerError::Config(format!(
                "model capacity {}x{} differs from the environment layout {}x{}",
                model.m_max, model.k_max, env_config.m_max, env_config.k_max
            )));
        }
        let plan = TrainingPlan { mode, n_alt: hyper.n_alt, pretrain_steps: hyper.pretrain_steps };
        let pdim = ObservationLayout::pursuer(env_config.m_max, env_config.k_max).dim();
        let edim = ObservationLayout::evader(env_config.m_max, env_config.k_max).dim();
        let pursuer = AgentState::new(&model, pdim, &hyper, seed, 0)?;
        let evader = if plan.needs_evader() { Some(AgentState::new(&model, edim, &hyper, seed, 1)?) } else { None };
        let curriculum = Curriculum::new(&hyper, env_config.attachment);
        let pool = Self::make_pool(&env_config, &model, &hyper, seed, 0, curriculum.attachment_enabled())?;
        Ok(Self {
            env_config,
            model,
            hyper,
            plan,
            seed,
            pursuer,
            evader,
            curriculum,
            env_steps: 0,
            evader_steps: 0,
            rounds: 0,
            episodes: 0,
            pool,
        })
    }

    fn make_pool(
        env: &EnvConfig,
        model: &ModelConfig,
        hyper: &Hyperparams,
        seed: u64,
        epoch: u64,
        attachment: bool,
    ) -> Result<EnvPool, LearnerError> {
        let mut pool = EnvPool::new(env, hyper.n_envs, model.window, child_seed(seed, epoch), model.random_order)?;
        pool.set_attachment(attachment);
        Ok(pool)
    }

    /// Restarts every environment after restoring state from a checkpoint.
    /// In-flight episodes are discarded and episode seeds continue from
    /// the restored round counter.
    pub fn restart_pool(&mut self) -> Result<(), LearnerError> {
        self.curriculum.set_attachment_allowed(self.env_config.attachment);
        self.pool = Self::make_pool(
            &self.env_config,
            &self.model,
            &self.hyper,
            self.seed,
            self.rounds,
            self.curriculum.attachment_enabled(),
        )?;
        for agent in std::iter::once(&mut self.pursuer).chain(self.evader.as_mut()) {
            agent.scaler.returns = vec![0.0; self.hyper.n_envs];
        }
        Ok(())
    }

    /// Runs rounds until at least `budget` environment steps have been
    /// taken in total.
    pub fn train(&mut self, budget: u64, sink: &mut dyn FnMut(TrainerEvent<'_>)) -> Result<(), LearnerError> {
        while self.env_steps < budget {
            self.run_round(sink)?;
        }
        Ok(())
    }

    /// One collect-prepare-update cycle.
    pub fn run_round(&mut self, sink: &mut dyn FnMut(TrainerEvent<'_>)) -> Result<(), LearnerError> {
        let round = self.plan.round(self.rounds, self.evader_steps);
        self.pool.set_attachment(self.curriculum.attachment_enabled());
        let mut rng = rng_for(self.seed, Stream::Sampling, self.rounds);
        let mut shuffle = rng_for(self.seed, Stream::Shuffle, self.rounds);
        let (learner, opponent) = match round.learner {
            Role::Pursuer => (&mut self.pursuer, self.evader.as_ref()),
            Role::Evader => (
                self.evader.as_mut().ok_or_else(|| LearnerError::Config("schedule needs an evader policy".into()))?,
                Some(&self.pursuer),
            ),
        };
        let opponent = match (round.opponent_policy, opponent) {
            (true, Some(o)) => Opponent::Policy(&o.policy),
            _ => Opponent::Scripted,
        };
        let (mut batch, finished) = collect_rollouts(
            &mut self.pool,
            round.learner,
            &learner.policy,
            opponent,
            self.hyper.rollout_len,
            Sampling::Stochastic,
            &mut learner.scaler,
            &mut rng,
        )?;
        let target_policy = learner.target.apply_to(&learner.policy);
        prepare_batch(&mut batch, &learner.policy, &target_policy, &self.hyper)?;
        let metrics = update(
            &mut learner.policy,
            &mut learner.optimizer,
            &mut learner.target,
            &batch,
            &self.hyper,
            learner.updates,
            &mut shuffle,
        )?;
        learner.updates += 1;

        let transitions = batch.len() as u64;
        let was_pretraining = round.learner == Role::Evader && self.plan.mode == SelfPlayMode::Pretrained;
        self.env_steps += transitions;
        if round.learner == Role::Evader {
            self.evader_steps += transitions;
        }
        for ep in &finished {
            self.episodes += 1;
            if round.learner == Role::Pursuer {
                if let Some(stage) = self.curriculum.record(ep.captured(), ep.success) {
                    sink(TrainerEvent::StageChange(stage));
                }
            }
            sink(TrainerEvent::Episode {
                summary: ep,
                role: round.learner,
                stage: self.curriculum.stage(),
                env_steps: self.env_steps,
            });
        }
        let n_ep = finished.len().max(1) as f64;
        let row = UpdateRow {
            round: self.rounds,
            env_steps: self.env_steps,
            role: round.learner,
            stage: self.curriculum.stage(),
            metrics,
            mean_reward: batch.samples.iter().map(|s| s.raw_reward).sum::<f64>() / batch.len().max(1) as f64,
            episodes: finished.len(),
            capture_rate: finished.iter().filter(|e| e.captured()).count() as f64 / n_ep,
            success_rate: finished.iter().filter(|e| e.success).count() as f64 / n_ep,
            collisions_per_episode: finished.iter().map(|e| e.collisions as f64).sum::<f64>() / n_ep,
            delta_v: finished.iter().map(|e| e.pursuer_delta_v).sum::<f64>() / n_ep,
        };
        self.rounds += 1;
        sink(TrainerEvent::Update(&row));
        if was_pretraining && self.evader_steps >= self.plan.pretrain_steps {
            sink(TrainerEvent::PretrainComplete);
        }
        Ok(())
    }
}
