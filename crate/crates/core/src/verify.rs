//! Oracle suites: closed-form dynamics against numerical integration and
//! the matrix exponential, autoregressive decoding against teacher
//! forcing, analytic gradients against finite differences, the advantage
//! decomposition on enumerable games, and backlog non-negativity.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{orderings, verify_decomposition, ToyGame};
use crate::learner::{combined_loss, Hyperparams, MiniBatch};
use crate::nn::Graph;
use crate::orbit::{
    cw_matrices, integrate_oracle, propagate, state_transition, ControlAccel, LvlhState, OrbitParams, GEO_RADIUS_KM,
    MU_EARTH,
};
use crate::policy::{squash, AgentAction, ModelConfig, ObservationWindow, Policy, Sampling};
use crate::queue::{update_queue, OffloadDecision, QueueState, SensedLoad};

/// Outcome of one suite: the worst measured error against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

impl CheckReport {
    fn new(name: &'static str, measured: f64, tolerance: f64, detail: String, started: Instant) -> Self {
        Self {
            name,
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail,
            seconds: started.elapsed().as_secs_f64(),
        }
    }

    fn failed(name: &'static str, detail: String, started: Instant) -> Self {
        Self {
            name,
            passed: false,
            measured: f64::NAN,
            tolerance: 0.0,
            detail,
            seconds: started.elapsed().as_secs_f64(),
        }
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {:.3e} (limit {:.1e}) {} [{:.2}s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail,
            self.seconds
        )
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> LvlhState {
    LvlhState::from_array(std::array::from_fn(|i| {
        if i % 2 == 0 {
            rng.gen_range(-5.0..5.0)
        } else {
            rng.gen_range(-5e-3..5e-3)
        }
    }))
}

/// Ballistic trajectories of `steps` one-second steps: the closed form
/// against RK4 with 10 substeps, worst position error in km.
pub fn dynamics_vs_integrator(trajectories: usize, steps: usize, seed: u64) -> CheckReport {
    let started = Instant::now();
    let orbit = OrbitParams::geo();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trajectories {
        let mut a = random_state(&mut rng);
        let mut b = a;
        for _ in 0..steps {
            a = match propagate(&a, &ControlAccel::ZERO, 1.0, &orbit) {
                Ok(s) => s,
                Err(e) => return CheckReport::failed("dynamics", e.to_string(), started),
            };
            b = match integrate_oracle(&b, &ControlAccel::ZERO, 1.0, &orbit, 10) {
                Ok(s) => s,
                Err(e) => return CheckReport::failed("dynamics", e.to_string(), started),
            };
            for (p, q) in a.position().iter().zip(b.position()) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    CheckReport::new("dynamics", worst, 1e-8, format!("{trajectories} trajectories x {steps} steps, km"), started)
}

/// Closed-form transition matrix against `exp(A·Δt)`, worst entry error
/// relative to the largest entry.
pub fn transition_vs_expm() -> CheckReport {
    let started = Instant::now();
    let orbit = OrbitParams::geo();
    let a = match cw_matrices(&orbit) {
        Ok(m) => m.a,
        Err(e) => return CheckReport::failed("transition", e.to_string(), started),
    };
    let mut worst: f64 = 0.0;
    for dt in [0.1, 1.0, 10.0, 60.0, 600.0, 3600.0] {
        let phi = match state_transition(&orbit, dt) {
            Ok(t) => t.phi,
            Err(e) => return CheckReport::failed("transition", e.to_string(), started),
        };
        let expm = (a * dt).exp();
        let scale = expm.amax().max(1.0);
        worst = worst.max((phi - expm).amax() / scale);
    }
    CheckReport::new("transition", worst, 1e-10, "dt from 0.1 s to 1 h, relative".into(), started)
}

/// Mean motion derived from the geostationary radius against 7.2921e-5
/// rad/s, to one unit in the last quoted digit (the quoted value is
/// truncated, not rounded).
pub fn mean_motion() -> CheckReport {
    let started = Instant::now();
    match OrbitParams::from_radius(MU_EARTH, GEO_RADIUS_KM) {
        Ok(o) => {
            let err = (o.omega - 7.2921e-5).abs();
            CheckReport::new("mean_motion", err, 1e-9, format!("omega = {:.6e} rad/s", o.omega), started)
        }
        Err(e) => CheckReport::failed("mean_motion", e.to_string(), started),
    }
}

fn tiny_model(d_model: usize) -> ModelConfig {
    ModelConfig { d_model, n_heads: 2, n_blocks_enc: 1, n_blocks_dec: 1, d_ff: 12, window: 2, ..ModelConfig::default() }
}

fn jitter(p: &mut Policy, rng: &mut ChaCha8Rng) {
    for id in p.store().ids().collect::<Vec<_>>() {
        for v in p.store_mut().get_mut(id).data.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

fn random_window(agents: usize, obs_dim: usize, window: usize, rng: &mut ChaCha8Rng) -> ObservationWindow {
    let data = (0..window * agents * obs_dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
    ObservationWindow::from_data(window, agents, obs_dim, data).expect("window shape matches its data")
}

fn random_actions(agents: usize, rng: &mut ChaCha8Rng) -> Vec<AgentAction> {
    (0..agents)
        .map(|_| {
            let raw: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            AgentAction { raw, unit: squash(&raw), log_prob: 0.0 }
        })
        .collect()
}

/// Sequential per-agent decoding against one teacher-forced pass over
/// `tuples` random (parameters, observation, action) draws with 1 to 5
/// agents; worst absolute log-probability gap.
pub fn autoregressive_equivalence(tuples: usize, seed: u64) -> CheckReport {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs_dim = 6;
    let mut worst: f64 = 0.0;
    let run = |rng: &mut ChaCha8Rng, worst: &mut f64, i: usize| -> Result<(), String> {
        let n = 1 + i % 5;
        let mut p = Policy::new(tiny_model(8), obs_dim, rng).map_err(|e| e.to_string())?;
        jitter(&mut p, rng);
        let w = random_window(n, obs_dim, 2, rng);
        let reps = p.encode(&w).map_err(|e| e.to_string())?;
        let h = p.expert_context(&reps, i % 2).map_err(|e| e.to_string())?;
        let acts = random_actions(n, rng);
        let (parallel, _) = p.decode_logprobs(&reps, &h, &acts).map_err(|e| e.to_string())?;
        let mut sequential = 0.0;
        for m in 0..n {
            let (_, dist) =
                p.decode_act(&reps, &h, &acts[..m], m, Sampling::Deterministic, rng).map_err(|e| e.to_string())?;
            let lp = dist.log_prob(&acts[m].raw);
            *worst = worst.max((lp - parallel[m]).abs());
            sequential += lp;
        }
        *worst = worst.max((sequential - parallel.iter().sum::<f64>()).abs());
        Ok(())
    };
    for i in 0..tuples {
        if let Err(e) = run(&mut rng, &mut worst, i) {
            return CheckReport::failed("autoregressive", e, started);
        }
    }
    CheckReport::new("autoregressive", worst, 1e-6, format!("{tuples} tuples, n in 1..=5"), started)
}

/// Analytic gradient of the combined objective against central finite
/// differences at `coords` random parameters of a `d_model = 8` model;
/// worst relative error.
pub fn gradient_check(coords: usize, seed: u64) -> CheckReport {
    let started = Instant::now();
    match gradient_check_inner(coords, seed) {
        Ok((worst, checked, total)) => {
            CheckReport::new("gradients", worst, 1e-4, format!("{checked} of {total} parameters, relative"), started)
        }
        Err(e) => CheckReport::failed("gradients", e, started),
    }
}

fn gradient_check_inner(coords: usize, seed: u64) -> Result<(f64, usize, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, agents, obs_dim, window) = (3, 3, 5, 2);
    let mut p = Policy::new(tiny_model(8), obs_dim, &mut rng).map_err(|e| e.to_string())?;
    jitter(&mut p, &mut rng);
    let windows: Vec<ObservationWindow> =
        (0..samples).map(|_| random_window(agents, obs_dim, window, &mut rng)).collect();
    let actions: Vec<Vec<AgentAction>> = (0..samples).map(|_| random_actions(agents, &mut rng)).collect();
    let rows = samples * agents;
    let hyper = Hyperparams { entropy_coef: 0.01, eta_reg: 0.05, clip: 0.2, ..Hyperparams::default() };
    let tasks: Vec<usize> = (0..samples).map(|s| s % 2).collect();
    let mut batch = MiniBatch {
        windows: windows.iter().collect(),
        tasks: tasks.clone(),
        actions: actions.clone(),
        old_log_probs: vec![0.0; rows],
        advantages: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        value_targets: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    // Old log-probs near the current ones so both branches of the clipped
    // surrogate appear.
    let current = {
        let mut g = Graph::new(p.store());
        let enc = p.encode_graph(&mut g, &batch.windows).map_err(|e| e.to_string())?;
        let mix = p.mix_graph(&mut g, &enc, &tasks).map_err(|e| e.to_string())?;
        let means = p.decode_graph(&mut g, &enc, mix.h, Policy::teacher_inputs(&actions), agents);
        let ls = p.log_std_graph(&mut g);
        let lp = p.log_prob_graph(&mut g, means, ls, &actions);
        g.value(lp).data.clone()
    };
    batch.old_log_probs = current.iter().map(|l| l + rng.gen_range(-0.4..0.4)).collect();

    let loss = |p: &Policy| -> Result<f64, String> {
        let mut g = Graph::new(p.store());
        Ok(combined_loss(p, &mut g, &batch, &hyper).map_err(|e| e.to_string())?.1.total)
    };
    let grads = {
        let mut g = Graph::new(p.store());
        let (root, _) = combined_loss(&p, &mut g, &batch, &hyper).map_err(|e| e.to_string())?;
        g.backward(root).into_dense(p.store())
    };
    let all: Vec<(usize, usize)> =
        p.store().ids().enumerate().flat_map(|(k, id)| (0..p.store().get(id).len()).map(move |i| (k, i))).collect();
    let ids: Vec<_> = p.store().ids().collect();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let (k, i) = all[rng.gen_range(0..all.len())];
        let id = ids[k];
        let orig = p.store().get(id).data[i];
        p.store_mut().get_mut(id).data[i] = orig + step;
        let up = loss(&p)?;
        p.store_mut().get_mut(id).data[i] = orig - step;
        let down = loss(&p)?;
        p.store_mut().get_mut(id).data[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let an = grads[k].data[i];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4));
    }
    Ok((worst, coords, all.len()))
}

/// Telescoping advantage identity over every ordering of `two` random
/// two-agent and `three` random three-agent games; worst residual.
pub fn decomposition_suite(two: usize, three: usize, seed: u64) -> CheckReport {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for (agents, count) in [(2, two), (3, three)] {
        for g in 0..count {
            let game_seed = seed.wrapping_add((agents * 1000 + g) as u64);
            let game = match ToyGame::random(agents, 3, g % 2 == 0, game_seed) {
                Ok(game) => game,
                Err(e) => return CheckReport::failed("decomposition", e.to_string(), started),
            };
            for order in orderings(agents) {
                match verify_decomposition(&game, &order) {
                    Ok(r) => worst = worst.max(r.max_residual),
                    Err(e) => return CheckReport::failed("decomposition", e.to_string(), started),
                }
            }
        }
    }
    CheckReport::new("decomposition", worst, 1e-12, format!("{two} two-agent and {three} three-agent games"), started)
}

/// Randomized backlog updates: the most negative backlog ever produced
/// (0 when none) plus the hand-evaluated clamp case `[3 − 5]⁺ + 1 = 1`.
pub fn queue_safety(steps: usize, seed: u64) -> CheckReport {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k) = (4, 2);
    let mut q = QueueState::empty(m, k);
    let mut most_negative: f64 = 0.0;
    for _ in 0..steps {
        let mut d = OffloadDecision::none(m, k);
        for i in 0..m {
            for j in 0..m {
                if i != j && rng.gen_bool(0.3) {
                    for t in 0..k {
                        d.set(i, j, t, rng.gen_range(0.0..3.0));
                    }
                }
            }
        }
        let s = SensedLoad {
            s: (0..m)
                .map(|_| (0..k).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..2.0) } else { 0.0 }).collect())
                .collect(),
        };
        q = match update_queue(&q, &d, &s, rng.gen_range(0.0..2.0)) {
            Ok(n) => n,
            Err(e) => return CheckReport::failed("queue", e.to_string(), started),
        };
        for row in q.rows() {
            for &v in row {
                most_negative = most_negative.min(v);
            }
        }
    }
    let clamp = {
        let q = QueueState::from_rows(vec![vec![3.0], vec![0.0]]).expect("valid backlog");
        let mut d = OffloadDecision::none(2, 1);
        d.set(0, 1, 0, 5.0);
        let s = SensedLoad { s: vec![vec![1.0], vec![0.0]] };
        update_queue(&q, &d, &s, 0.0).map(|n| n.get(0, 0))
    };
    match clamp {
        Ok(v) if v == 1.0 => {
            CheckReport::new("queue", -most_negative, 0.0, format!("{steps} steps; clamp case gives {v}"), started)
        }
        Ok(v) => CheckReport::failed("queue", format!("clamp case gave {v}, expected 1"), started),
        Err(e) => CheckReport::failed("queue", e.to_string(), started),
    }
}

/// Every suite at its acceptance size.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    vec![
        dynamics_vs_integrator(10, 1000, seed),
        transition_vs_expm(),
        mean_motion(),
        autoregressive_equivalence(200, seed),
        gradient_check(240, seed),
        decomposition_suite(50, 20, seed),
        queue_safety(100_000, seed),
    ]
}
