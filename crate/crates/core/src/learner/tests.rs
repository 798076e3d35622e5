use super::*;
use crate::env::{EnvConfig, ObservationLayout};
use crate::nn::{Graph, Matrix, ParamStore, RmsProp};
use crate::policy::{squash, AgentAction, ModelConfig, ObservationWindow, Policy, Sampling};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_blocks_enc: 1,
        n_blocks_dec: 1,
        d_ff: 12,
        window: 2,
        ..ModelConfig::default()
    }
}

fn jitter(p: &mut Policy, rng: &mut ChaCha8Rng) {
    for id in p.store().ids().collect::<Vec<_>>() {
        for v in p.store_mut().get_mut(id).data.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

fn short_env() -> EnvConfig {
    EnvConfig { horizon: 40, ..EnvConfig::desk_scale() }
}

fn small_hyper() -> Hyperparams {
    Hyperparams { n_envs: 2, rollout_len: 16, batch: 8, ppo_epochs: 2, ..Hyperparams::default() }
}

fn pursuer_dim(c: &EnvConfig) -> usize {
    ObservationLayout::pursuer(c.m_max, c.k_max).dim()
}

/// Synthetic mini-batch over random windows and actions.
struct Synthetic {
    windows: Vec<ObservationWindow>,
    tasks: Vec<usize>,
    actions: Vec<Vec<AgentAction>>,
    old: Vec<f64>,
    adv: Vec<f64>,
    targets: Vec<f64>,
}

impl Synthetic {
    fn new(samples: usize, agents: usize, obs_dim: usize, window: usize, rng: &mut ChaCha8Rng) -> Self {
        let windows = (0..samples)
            .map(|_| {
                let data = (0..window * agents * obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                ObservationWindow::from_data(window, agents, obs_dim, data).unwrap()
            })
            .collect();
        let actions = (0..samples)
            .map(|_| {
                (0..agents)
                    .map(|_| {
                        let raw: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5));
                        AgentAction { raw, unit: squash(&raw), log_prob: 0.0 }
                    })
                    .collect()
            })
            .collect();
        let rows = samples * agents;
        Self {
            windows,
            tasks: (0..samples).map(|s| s % 2).collect(),
            actions,
            old: vec![0.0; rows],
            adv: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            targets: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn view(&self) -> MiniBatch<'_> {
        MiniBatch {
            windows: self.windows.iter().collect(),
            tasks: self.tasks.clone(),
            actions: self.actions.clone(),
            old_log_probs: self.old.clone(),
            advantages: self.adv.clone(),
            value_targets: self.targets.clone(),
        }
    }

    /// Current per-agent log-probs and values under `p`.
    fn current(&self, p: &Policy, hyper: &Hyperparams) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new(p.store());
        let enc = p.encode_graph(&mut g, &self.windows.iter().collect::<Vec<_>>()).unwrap();
        let mix = p.mix_graph(&mut g, &enc, &self.tasks).unwrap();
        let means = p.decode_graph(&mut g, &enc, mix.h, Policy::teacher_inputs(&self.actions), enc.agents);
        let ls = p.log_std_graph(&mut g);
        let lp = p.log_prob_graph(&mut g, means, ls, &self.actions);
        let _ = hyper;
        (g.value(lp).data.clone(), g.value(enc.values).data.clone())
    }
}

fn loss_of(p: &Policy, s: &Synthetic, h: &Hyperparams) -> f64 {
    let mut g = Graph::new(p.store());
    combined_loss(p, &mut g, &s.view(), h).unwrap().1.total
}

fn scalar_store(v: f64) -> (ParamStore, TargetParams) {
    let mut s = ParamStore::new();
    let id = s.add("enc.value.w", Matrix::scalar(v));
    (s, TargetParams::from_parts(vec![id], vec![Matrix::scalar(0.0)]))
}

#[test]
fn defaults_are_valid_and_checked() {
    let h = Hyperparams::default();
    h.validate().unwrap();
    assert_eq!((h.lr, h.gamma, h.gae_lambda, h.clip, h.batch, h.eta_soft), (1e-4, 0.99, 0.95, 0.05, 64, 0.001));
    assert!(Hyperparams { gamma: 1.0, ..h.clone() }.validate().is_err());
    assert!(Hyperparams { clip: 0.0, ..h.clone() }.validate().is_err());
    assert!(Hyperparams { gae_lambda: 1.5, ..h.clone() }.validate().is_err());
    assert!(Hyperparams { n_envs: 1000, ..h }.validate().is_err());
}

#[test]
fn soft_update_blends() {
    let (store, mut t) = scalar_store(1.0);
    soft_update(&mut t, &store, 0.001).unwrap();
    assert!((t.values()[0].item() - 0.001).abs() < 1e-15);
    let before = t.clone();
    soft_update(&mut t, &store, 0.0).unwrap();
    assert_eq!(t, before);
    soft_update(&mut t, &store, 1.0).unwrap();
    assert_eq!(t.values()[0].item(), 1.0);
    let mut bad = TargetParams::from_parts(t.ids().to_vec(), vec![Matrix::zeros(2, 1)]);
    assert!(soft_update(&mut bad, &store, 0.5).is_err());
}

#[test]
fn encoder_loss_examples() {
    assert_eq!(encoder_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    let y = 1.0 + 0.99 * 2.0;
    assert!((encoder_loss(&[2.0], &[y]) - 0.9604).abs() < 1e-12);
    let v = [0.3, -0.2, 1.1];
    let t = [0.5, 0.4, 0.0];
    let doubled: Vec<f64> = v.iter().zip(&t).map(|(v, t)| v - 2.0 * (v - t)).collect();
    assert!((encoder_loss(&v, &doubled) - 4.0 * encoder_loss(&v, &t)).abs() < 1e-12);
}

#[test]
fn decoder_loss_examples() {
    assert!((decoder_loss(&[0.0], &[0.0], &[2.0], 0.05) + 2.0).abs() < 1e-12);
    assert!((decoder_loss(&[1.2f64.ln()], &[0.0], &[1.0], 0.05) + 1.05).abs() < 1e-12);
    assert!((decoder_loss(&[0.8f64.ln()], &[0.0], &[-1.0], 0.05) - 0.95).abs() < 1e-12);
}

proptest! {
    #[test]
    fn clipped_surrogate_never_exceeds_unclipped(lr in -2.0f64..2.0, a in -5.0f64..5.0, eps in 0.01f64..0.9) {
        let clipped = -decoder_loss(&[lr], &[0.0], &[a], eps);
        prop_assert!(clipped <= lr.exp() * a + 1e-12);
    }
}

#[test]
fn loss_components_sum_to_total() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = Policy::new(tiny_model(), 5, &mut rng).unwrap();
    jitter(&mut p, &mut rng);
    let s = Synthetic::new(4, 3, 5, 2, &mut rng);
    let h = Hyperparams { entropy_coef: 0.01, ..Hyperparams::default() };
    let mut g = Graph::new(p.store());
    let (_, parts) = combined_loss(&p, &mut g, &s.view(), &h).unwrap();
    assert!((parts.encoder + parts.decoder + parts.regularizer + parts.entropy_bonus - parts.total).abs() < 1e-12);
    let (lp, v) = s.current(&p, &h);
    assert!((parts.encoder - encoder_loss(&v, &s.targets)).abs() < 1e-12);
    assert!((parts.decoder - decoder_loss(&lp, &s.old, &s.adv, h.clip)).abs() < 1e-12);
}

#[test]
fn combined_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = Policy::new(tiny_model(), 5, &mut rng).unwrap();
    jitter(&mut p, &mut rng);
    let mut s = Synthetic::new(3, 3, 5, 2, &mut rng);
    let h = Hyperparams { entropy_coef: 0.01, eta_reg: 0.05, clip: 0.2, ..Hyperparams::default() };
    let (lp, _) = s.current(&p, &h);
    // Old log-probs near the current ones so both clipped and unclipped
    // branches appear away from the kinks.
    s.old = lp.iter().map(|l| l + rng.gen_range(-0.4..0.4)).collect();
    let mut g = Graph::new(p.store());
    let (root, _) = combined_loss(&p, &mut g, &s.view(), &h).unwrap();
    let grads = g.backward(root).into_dense(p.store());
    let coords: Vec<(usize, usize)> =
        p.store().ids().enumerate().flat_map(|(k, id)| (0..p.store().get(id).len()).map(move |i| (k, i))).collect();
    assert!(coords.len() >= 200);
    let step = 1e-5;
    let mut checked = 0;
    for _ in 0..240 {
        let (k, i) = coords[rng.gen_range(0..coords.len())];
        let id = p.store().ids().nth(k).unwrap();
        let orig = p.store().get(id).data[i];
        p.store_mut().get_mut(id).data[i] = orig + step;
        let up = loss_of(&p, &s, &h);
        p.store_mut().get_mut(id).data[i] = orig - step;
        let dn = loss_of(&p, &s, &h);
        p.store_mut().get_mut(id).data[i] = orig;
        let fd = (up - dn) / (2.0 * step);
        let an = grads[k].data[i];
        let tol = 1e-4 * fd.abs().max(an.abs()).max(1e-4);
        assert!((fd - an).abs() <= tol, "{}[{i}]: fd {fd} vs {an}", p.store().name(id));
        checked += 1;
    }
    assert!(checked >= 200);
}

#[test]
fn every_parameter_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = Policy::new(tiny_model(), 5, &mut rng).unwrap();
    jitter(&mut p, &mut rng);
    let s = Synthetic::new(4, 3, 5, 2, &mut rng);
    let h = Hyperparams { entropy_coef: 0.01, clip: 0.9, ..Hyperparams::default() };
    let mut g = Graph::new(p.store());
    let (root, _) = combined_loss(&p, &mut g, &s.view(), &h).unwrap();
    let grads = g.backward(root).into_dense(p.store());
    for (id, gr) in p.store().ids().zip(&grads) {
        assert!(gr.max_abs() > 0.0, "no gradient reaches {}", p.store().name(id));
    }
}

fn synthetic_batch(s: &Synthetic, values: &[f64]) -> RolloutBatch {
    let n = s.actions[0].len();
    let samples = (0..s.windows.len())
        .map(|i| Sample {
            window: s.windows[i].clone(),
            task: s.tasks[i],
            actions: s.actions[i]
                .iter()
                .enumerate()
                .map(|(m, a)| AgentAction { log_prob: s.old[i * n + m], ..*a })
                .collect(),
            reward: 0.0,
            raw_reward: 0.0,
            done: false,
            values: values[i * n..(i + 1) * n].to_vec(),
            advantage: s.adv[i * n],
            ret: 0.0,
            value_targets: s.targets[i * n..(i + 1) * n].to_vec(),
        })
        .collect();
    RolloutBatch { role: Role::Pursuer, samples, trajectories: Vec::new() }
}

#[test]
fn stationary_batch_leaves_parameters_in_place() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut p = Policy::new(tiny_model(), 5, &mut rng).unwrap();
    jitter(&mut p, &mut rng);
    let h = Hyperparams { eta_reg: 0.0, entropy_coef: 0.0, batch: 4, ..Hyperparams::default() };
    let mut s = Synthetic::new(4, 3, 5, 2, &mut rng);
    let (lp, v) = s.current(&p, &h);
    s.old = lp;
    s.adv = vec![0.0; s.adv.len()];
    s.targets = v.clone();
    let batch = synthetic_batch(&s, &v);
    let before = p.store().clone();
    let mut opt = RmsProp::new(p.store(), h.lr);
    let mut target = TargetParams::from_policy(&p);
    update(&mut p, &mut opt, &mut target, &batch, &Hyperparams { ppo_epochs: 1, ..h }, 0, &mut rng).unwrap();
    let drift: f64 = before
        .ids()
        .map(|id| before.get(id).data.iter().zip(&p.store().get(id).data).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    assert!(drift < 1e-8, "drift {drift}");
}

#[test]
fn one_step_decreases_the_combined_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = Policy::new(tiny_model(), 5, &mut rng).unwrap();
    jitter(&mut p, &mut rng);
    let mut s = Synthetic::new(6, 3, 5, 2, &mut rng);
    let h = Hyperparams { lr: 1e-5, batch: 6, ppo_epochs: 1, eta_soft: 0.0, ..Hyperparams::default() };
    let (lp, v) = s.current(&p, &h);
    s.old = lp;
    s.adv = (0..s.adv.len()).map(|r| s.adv[r - r % 3]).collect();
    let batch = synthetic_batch(&s, &v);
    let before = loss_of(&p, &s, &h);
    let mut opt = RmsProp::new(p.store(), h.lr);
    let mut target = TargetParams::from_policy(&p);
    let m = update(&mut p, &mut opt, &mut target, &batch, &h, 0, &mut rng).unwrap();
    assert!((m.total_loss - before).abs() < 1e-9);
    assert!(loss_of(&p, &s, &h) < before);
}

#[test]
fn empty_rollout_for_zero_steps() {
    let c = short_env();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = Policy::new(tiny_model(), pursuer_dim(&c), &mut rng).unwrap();
    let mut pool = EnvPool::new(&c, 2, 2, 1, false).unwrap();
    let mut sc = RewardScaler::new(2, 0.99);
    let (b, eps) =
        collect_rollouts(&mut pool, Role::Pursuer, &p, Opponent::Scripted, 0, Sampling::Stochastic, &mut sc, &mut rng)
            .unwrap();
    assert!(b.is_empty() && eps.is_empty());
}

fn rollout(seed: u64, sampling: Sampling, random_order: bool) -> (RolloutBatch, Vec<EpisodeSummary>) {
    let c = short_env();
    let p = Policy::new(tiny_model(), pursuer_dim(&c), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let mut pool = EnvPool::new(&c, 1, 2, seed, random_order).unwrap();
    let mut sc = RewardScaler::new(1, 0.99);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    collect_rollouts(&mut pool, Role::Pursuer, &p, Opponent::Scripted, 60, sampling, &mut sc, &mut rng).unwrap()
}

#[test]
fn rollouts_are_deterministic_and_restart_episodes() {
    let (a, ea) = rollout(11, Sampling::Deterministic, false);
    let (b, eb) = rollout(11, Sampling::Deterministic, false);
    assert_eq!(a, b);
    assert_eq!(ea, eb);
    assert_eq!(a.len(), 60);
    assert_eq!(ea.len(), 1, "a 40-step horizon ends exactly one episode in 60 steps");
    assert!(a.samples[39].done);
    assert_eq!(a.samples.iter().filter(|s| s.done).count(), 1);
    let (c, _) = rollout(11, Sampling::Stochastic, true);
    assert_eq!(c, rollout(11, Sampling::Stochastic, true).0);
}

#[test]
fn stored_log_probs_match_teacher_forcing() {
    let c = short_env();
    let p = Policy::new(tiny_model(), pursuer_dim(&c), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let (b, _) = rollout(12, Sampling::Stochastic, true);
    for s in b.samples.iter().step_by(7) {
        let reps = p.encode(&s.window).unwrap();
        let h = p.expert_context(&reps, s.task).unwrap();
        let (lp, _) = p.decode_logprobs(&reps, &h, &s.actions).unwrap();
        for (a, l) in s.actions.iter().zip(lp) {
            assert!((a.log_prob - l).abs() < 1e-6);
        }
    }
}

#[test]
fn prepared_targets_follow_the_bellman_form() {
    let c = short_env();
    let p = Policy::new(tiny_model(), pursuer_dim(&c), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let (mut b, _) = rollout(13, Sampling::Stochastic, false);
    let h = Hyperparams::default();
    prepare_batch(&mut b, &p, &p, &h).unwrap();
    let adv: Vec<f64> = b.samples.iter().map(|s| s.advantage).collect();
    let mean = adv.iter().sum::<f64>() / adv.len() as f64;
    assert!(mean.abs() < 1e-9);
    for i in 0..b.len() - 1 {
        let s = &b.samples[i];
        if s.done {
            assert!(s.value_targets.iter().all(|&y| y == s.reward));
        } else {
            let next = p.values_batch(&[&b.samples[i + 1].window]).unwrap();
            for (y, v) in s.value_targets.iter().zip(&next[0]) {
                assert!((y - (s.reward + h.gamma * v)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn lambda_return_targets_reduce_to_bellman_at_zero_lambda() {
    let c = short_env();
    let p = Policy::new(tiny_model(), pursuer_dim(&c), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let (batch, _) = rollout(13, Sampling::Stochastic, false);
    let bellman = Hyperparams { gae_lambda: 0.0, ..Hyperparams::default() };
    let lambda = Hyperparams { value_target: ValueTarget::LambdaReturn, ..bellman.clone() };
    let (mut a, mut b) = (batch.clone(), batch);
    prepare_batch(&mut a, &p, &p, &bellman).unwrap();
    prepare_batch(&mut b, &p, &p, &lambda).unwrap();
    let n = a.agents();
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert_eq!(y.value_targets, vec![y.ret; n]);
        // The team value is the agent mean, so compare on that scale.
        let mx = x.value_targets.iter().sum::<f64>() / n as f64;
        assert!((mx - y.ret).abs() < 1e-9, "{mx} vs {}", y.ret);
    }
}

#[test]
fn curriculum_advances_on_windowed_success() {
    let h = Hyperparams { curriculum_window: 10, ..Hyperparams::default() };
    let mut c = Curriculum::new(&h, true);
    for _ in 0..9 {
        assert_eq!(c.record(true, false), None);
    }
    assert_eq!(c.record(true, false), Some(Stage::Pursue));
    for i in 0..10 {
        let r = c.record(i < 6, false);
        assert_eq!(r, if i == 9 { Some(Stage::Attach) } else { None });
    }
    assert!(c.attachment_enabled());
    for i in 0..10 {
        let r = c.record(true, i < 3);
        assert_eq!(r, if i == 9 { Some(Stage::Refine) } else { None });
    }
    let mut pursuit_only = Curriculum::new(&h, false);
    for _ in 0..30 {
        pursuit_only.record(true, false);
    }
    assert_eq!(pursuit_only.stage(), Stage::Pursue);
}

#[test]
fn schedules_follow_their_mode() {
    let h = Hyperparams { n_alt: 2, pretrain_steps: 10, ..Hyperparams::default() };
    assert!(selfplay_schedule("league", &h).is_err());
    let random = selfplay_schedule("random", &h).unwrap();
    assert!(!random.needs_evader());
    let pre = selfplay_schedule("pretrained", &h).unwrap();
    assert_eq!(pre.round(0, 0).learner, Role::Evader);
    assert_eq!(pre.round(1, 10), Round { learner: Role::Pursuer, opponent_policy: true });
    let game = selfplay_schedule("game", &h).unwrap();
    let roles: Vec<Role> = (0..6).map(|i| game.round(i, 0).learner).collect();
    use Role::*;
    assert_eq!(roles, vec![Pursuer, Pursuer, Evader, Evader, Pursuer, Pursuer]);
}

fn drift(a: &ParamStore, b: &ParamStore) -> f64 {
    a.ids().map(|id| a.get(id).data.iter().zip(&b.get(id).data).map(|(x, y)| (x - y).abs()).sum::<f64>()).sum()
}

#[test]
fn random_mode_never_creates_an_evader() {
    let mut t = Trainer::new(short_env(), tiny_model_env(), small_hyper(), SelfPlayMode::Random, 3).unwrap();
    t.train(64, &mut |_| {}).unwrap();
    assert!(t.evader.is_none());
    assert_eq!(t.env_steps, 64);
}

fn tiny_model_env() -> ModelConfig {
    let c = short_env();
    ModelConfig { m_max: c.m_max, k_max: c.k_max, ..tiny_model() }
}

#[test]
fn pretrained_mode_freezes_the_evader_before_pursuer_training() {
    let h = Hyperparams { pretrain_steps: 64, ..small_hyper() };
    let mut t = Trainer::new(short_env(), tiny_model_env(), h, SelfPlayMode::Pretrained, 4).unwrap();
    let mut log = Vec::new();
    t.train(128, &mut |e| match e {
        TrainerEvent::Update(r) => log.push(r.role),
        TrainerEvent::PretrainComplete => log.push(Role::Evader),
        _ => {}
    })
    .unwrap();
    // Two evader rounds, the completion marker, then pursuer rounds only.
    assert_eq!(log, vec![Role::Evader, Role::Evader, Role::Evader, Role::Pursuer, Role::Pursuer]);
    let frozen = t.evader.as_ref().unwrap().policy.store().clone();
    t.train(192, &mut |_| {}).unwrap();
    assert_eq!(drift(&frozen, t.evader.as_ref().unwrap().policy.store()), 0.0);
}

#[test]
fn game_mode_moves_both_parameter_sets() {
    let h = Hyperparams { n_alt: 1, ..small_hyper() };
    let mut t = Trainer::new(short_env(), tiny_model_env(), h, SelfPlayMode::Game, 5).unwrap();
    let p0 = t.pursuer.policy.store().clone();
    let e0 = t.evader.as_ref().unwrap().policy.store().clone();
    t.train(128, &mut |_| {}).unwrap();
    assert!(drift(&p0, t.pursuer.policy.store()) > 0.0);
    assert!(drift(&e0, t.evader.as_ref().unwrap().policy.store()) > 0.0);
}

#[test]
fn training_is_reproducible() {
    let run = || {
        let mut t = Trainer::new(short_env(), tiny_model_env(), small_hyper(), SelfPlayMode::Random, 9).unwrap();
        let mut rows = Vec::new();
        t.train(96, &mut |e| {
            if let TrainerEvent::Update(r) = e {
                rows.push(r.clone());
            }
        })
        .unwrap();
        (rows, t.pursuer.policy.store().clone())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}
