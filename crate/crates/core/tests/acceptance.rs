//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Training runs live under the cargo target tmpdir and are resumed from
//! their latest checkpoint, so a rerun only repeats the evaluations. Set
//! `ACCEPTANCE_FRESH=1` to discard them. The process exits non-zero on a
//! failing criterion only when `SATSWARM_ACCEPTANCE_STRICT=1`, so the other
//! test targets still run under a plain `cargo test`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use satswarm::eval::{
    head_tail_means, mass_preserving_smooth, monte_carlo, scalability_sweep, two_proportion_z, EvaderControl,
    PursuerControl,
};
use satswarm::learner::Trainer;
use satswarm::orbit::{OrbitParams, GEO_RADIUS_KM, MU_EARTH};
use satswarm::policy::Sampling;
use satswarm::runtime::checkpoint::{restore_trainer, trainer_checkpoint};
use satswarm::runtime::rows::{read_rows, RowTable, Schema};
use satswarm::runtime::{
    cmd_evaluate, cmd_simulate, cmd_train, latest_checkpoint, load_policies, read_checkpoint, Checkpoint, PolicySource,
    RunConfig, CHECKPOINT_DIR,
};
use satswarm::verify::{self, CheckReport};

const SEEDS: [u64; 3] = [1, 2, 3];
const BUDGET: u64 = 1_000_000;
const EVAL_RUNS: usize = 500;
const TABLE_OMEGA: f64 = 7.27e-5;
/// Rounds per box-kernel window when smoothing per-update reward means.
const REWARD_WINDOW: usize = 25;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome::new(false, detail)
}

fn reports(reports: &[CheckReport], limit_s: f64) -> Outcome {
    let seconds: f64 = reports.iter().map(|r| r.seconds).sum();
    let passed = reports.iter().all(|r| r.passed) && seconds < limit_s;
    let parts: Vec<String> = reports.iter().map(|r| format!("{r}")).collect();
    Outcome::new(passed, format!("{}; total {seconds:.2} s (limit {limit_s} s)", parts.join("; ")))
}

struct TrainedRun {
    seed: u64,
    cfg: RunConfig,
    checkpoint: PathBuf,
}

fn desk_config(base: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::desk_experiment(seed);
    // One run per seed serves the success, curriculum and collision checks,
    // so it includes the attachment phase.
    cfg.env.attachment = true;
    cfg.run.budget = BUDGET;
    cfg.run.eval_runs = EVAL_RUNS;
    cfg.run.output_dir = base.join(format!("desk-{seed}")).display().to_string();
    cfg
}

fn train(base: &Path, seed: u64) -> Result<TrainedRun, String> {
    let cfg = desk_config(base, seed);
    let started = Instant::now();
    let summary = cmd_train(&cfg, &mut |line| eprintln!("  [seed {seed}] {line}")).map_err(|e| e.to_string())?;
    let checkpoint = latest_checkpoint(&summary.output_dir.join(CHECKPOINT_DIR))
        .map_err(|e| e.to_string())?
        .ok_or_else(|| format!("seed {seed}: no checkpoint written"))?;
    eprintln!(
        "  [seed {seed}] {} env steps, {} rounds, {:.0} s this invocation{}",
        summary.env_steps,
        summary.rounds,
        started.elapsed().as_secs_f64(),
        if summary.resumed_from.is_some() { " (resumed)" } else { "" }
    );
    Ok(TrainedRun { seed, cfg, checkpoint })
}

fn criterion_7(runs: &[TrainedRun]) -> Result<Outcome, String> {
    let mut rates = Vec::new();
    let mut baselines = Vec::new();
    let mut parts = Vec::new();
    for run in runs {
        let eval = cmd_evaluate(&run.cfg, &run.checkpoint, Some(EVAL_RUNS)).map_err(|e| e.to_string())?;
        let rate = eval.stats.pursuit_success_rate.ok_or("empty evaluation")?;
        let base = monte_carlo(
            &run.cfg.env,
            PursuerControl::Random,
            EvaderControl::Scripted,
            EVAL_RUNS,
            run.seed,
            Sampling::Deterministic,
        )
        .map_err(|e| e.to_string())?;
        let base_rate = base.stats.pursuit_success_rate.ok_or("empty baseline")?;
        parts.push(format!("seed {}: policy {:.3} random {:.3}", run.seed, rate, base_rate));
        rates.push(rate);
        baselines.push(base_rate);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let base_mean = baselines.iter().sum::<f64>() / baselines.len() as f64;
    Ok(Outcome::new(
        mean >= 0.70 && base_mean <= 0.10,
        format!(
            "mean pursuit success {mean:.3} (need >= 0.70), random baseline {base_mean:.3} (need <= 0.10) over {EVAL_RUNS} episodes; {}",
            parts.join(", ")
        ),
    ))
}

fn role_column(table: &RowTable, role: &str, column: &str) -> Result<Vec<(u64, f64)>, String> {
    let r = table.column("role").ok_or("no role column")?;
    let s = table.column("stage").ok_or("no stage column")?;
    let c = table.column(column).ok_or_else(|| format!("no {column} column"))?;
    table
        .rows
        .iter()
        .filter(|row| &row[r] == role)
        .map(|row| {
            let stage = row[s].parse::<u64>().map_err(|e| e.to_string())?;
            let v = row[c].parse::<f64>().map_err(|e| e.to_string())?;
            Ok((stage, v))
        })
        .collect()
}

fn criterion_8(runs: &[TrainedRun]) -> Result<Outcome, String> {
    let mut passed = true;
    let mut parts = Vec::new();
    for run in runs {
        let table =
            read_rows(&run.cfg.output_dir().join(Schema::TrainMetrics.file_name())).map_err(|e| e.to_string())?;
        let rows = role_column(&table, "pursuer", "mean_reward")?;
        let mut stages = Vec::new();
        for stage in 1..=4u64 {
            let series: Vec<f64> = rows.iter().filter(|(s, _)| *s == stage).map(|&(_, v)| v).collect();
            match head_tail_means(&mass_preserving_smooth(&series, REWARD_WINDOW), 0.1) {
                Some((head, tail)) => {
                    passed &= tail > head;
                    stages.push(format!("stage {stage} {head:.3}->{tail:.3}"));
                }
                None => {
                    passed = false;
                    stages.push(format!("stage {stage} never reached"));
                }
            }
        }
        parts.push(format!("seed {}: {}", run.seed, stages.join(", ")));
    }
    Ok(Outcome::new(passed, format!("smoothed reward first->last 10% per stage; {}", parts.join("; "))))
}

fn criterion_9(runs: &[TrainedRun]) -> Result<Outcome, String> {
    let mut passed = true;
    let mut parts = Vec::new();
    for run in runs {
        let table =
            read_rows(&run.cfg.output_dir().join(Schema::TrainEpisodes.file_name())).map_err(|e| e.to_string())?;
        let counts: Vec<f64> = role_column(&table, "pursuer", "collisions")?.into_iter().map(|(_, v)| v).collect();
        let Some((first, last)) = head_tail_means(&counts, 0.1) else {
            passed = false;
            parts.push(format!("seed {}: no episodes", run.seed));
            continue;
        };
        let ok = last <= 0.2 * first;
        passed &= ok;
        // With no early collisions the bound only holds if none occur later.
        let note = if first == 0.0 { " (no collisions in the first decile, so no decline can be shown)" } else { "" };
        parts.push(format!("seed {}: {first:.3} -> {last:.3} over {} episodes{note}", run.seed, counts.len()));
    }
    Ok(Outcome::new(
        passed,
        format!("mean collisions per episode, first -> last decile (need last <= 0.2 x first); {}", parts.join("; ")),
    ))
}

fn criterion_10(run: &TrainedRun) -> Result<Outcome, String> {
    let ck = read_checkpoint(&run.checkpoint).map_err(|e| e.to_string())?;
    let (policy, _) = load_policies(&run.cfg, &ck, &run.checkpoint).map_err(|e| e.to_string())?;
    let sizes = [(2, 1), (4, 1), (5, 1)];
    let sweep = |control| {
        scalability_sweep(
            &run.cfg.env,
            control,
            EvaderControl::Scripted,
            &sizes,
            EVAL_RUNS,
            run.seed,
            Sampling::Deterministic,
        )
        .map_err(|e| e.to_string())
    };
    let trained = sweep(PursuerControl::Policy(&policy))?;
    let random = sweep(PursuerControl::Random)?;
    let mut passed = true;
    let mut parts = Vec::new();
    for (t, r) in trained.iter().zip(&random) {
        let test =
            two_proportion_z(t.result.stats.pursuit_successes, EVAL_RUNS, r.result.stats.pursuit_successes, EVAL_RUNS)
                .map_err(|e| e.to_string())?;
        passed &= test.p_greater < 0.01;
        parts.push(format!(
            "{}v{}: {:.3} vs {:.3}, z {:.2}, p {:.2e}",
            t.pursuers, t.evaders, test.p1, test.p2, test.z, test.p_greater
        ));
    }
    Ok(Outcome::new(
        passed,
        format!("seed-{} checkpoint vs random, one-sided p < 0.01; {}", run.seed, parts.join("; ")),
    ))
}

fn criterion_11(base: &Path, run: &TrainedRun) -> Result<Outcome, String> {
    let mut cfg = run.cfg.clone();
    cfg.run.output_dir = base.join("simulate").display().to_string();
    let simulate = || -> Result<Vec<u8>, String> {
        let path = cmd_simulate(&cfg, PolicySource::Checkpoint(&run.checkpoint), 3).map_err(|e| e.to_string())?;
        fs::read(&path).map_err(|e| e.to_string())
    };
    let first = simulate()?;
    let second = simulate()?;
    let same_trajectory = first == second && !first.is_empty();

    let bytes = fs::read(&run.checkpoint).map_err(|e| e.to_string())?;
    let ck = Checkpoint::decode(&bytes).map_err(|e| e.to_string())?;
    let c = &run.cfg;
    let mut trainer = Trainer::new(c.env.clone(), c.model.clone(), c.train.clone(), c.run.scenario, c.run.seed)
        .map_err(|e| e.to_string())?;
    restore_trainer(&mut trainer, &ck).map_err(|e| e.to_string())?;
    let same_container = ck.encode() == bytes;
    let same_trainer = trainer_checkpoint(&trainer).encode() == bytes;
    Ok(Outcome::new(
        same_trajectory && same_container && same_trainer,
        format!(
            "trajectory repeat identical: {same_trajectory} ({} bytes); checkpoint decode/encode identical: {same_container}; restored trainer re-encodes identically: {same_trainer} ({} bytes)",
            first.len(),
            bytes.len()
        ),
    ))
}

fn main() -> ExitCode {
    let base = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if std::env::var_os("ACCEPTANCE_FRESH").is_some_and(|v| v == "1") && base.exists() {
        fs::remove_dir_all(&base).expect("clear acceptance runs");
    }
    fs::create_dir_all(&base).expect("create acceptance directory");
    let seed = 1;
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();

    results.push((
        1,
        "dynamics exactness",
        reports(&[verify::dynamics_vs_integrator(10, 1000, seed), verify::transition_vs_expm()], 10.0),
    ));
    let omega = OrbitParams::from_radius(MU_EARTH, GEO_RADIUS_KM).expect("geostationary orbit").omega;
    let off = (omega - TABLE_OMEGA).abs() / TABLE_OMEGA;
    let check = verify::mean_motion();
    results.push((
        2,
        "mean motion",
        Outcome::new(check.passed && off <= 0.005, format!("{check}; {:.3}% from 7.27e-5 (limit 0.5%)", 100.0 * off)),
    ));
    results.push((3, "autoregressive equivalence", reports(&[verify::autoregressive_equivalence(200, seed)], 30.0)));
    results.push((4, "gradient fidelity", reports(&[verify::gradient_check(240, seed)], 60.0)));
    results.push((5, "decomposition identity", reports(&[verify::decomposition_suite(50, 20, seed)], 10.0)));
    results.push((6, "queue safety", reports(&[verify::queue_safety(100_000, seed)], f64::INFINITY)));

    let trained: Result<Vec<TrainedRun>, String> = SEEDS.iter().map(|&s| train(&base, s)).collect();
    match trained {
        Ok(runs) => {
            let or_fail = |r: Result<Outcome, String>| r.unwrap_or_else(|e| fail(format!("error: {e}")));
            results.push((7, "desk-scale training", or_fail(criterion_7(&runs))));
            results.push((8, "curriculum shape", or_fail(criterion_8(&runs))));
            results.push((9, "collision decline", or_fail(criterion_9(&runs))));
            results.push((10, "team-size transfer", or_fail(criterion_10(&runs[0]))));
            results.push((11, "determinism", or_fail(criterion_11(&base, &runs[0]))));
        }
        Err(e) => {
            for (id, name) in [
                (7, "desk-scale training"),
                (8, "curriculum shape"),
                (9, "collision decline"),
                (10, "team-size transfer"),
                (11, "determinism"),
            ] {
                results.push((id, name, fail(format!("training failed: {e}"))));
            }
        }
    }

    for (id, name, o) in &results {
        println!("criterion {id:>2} {} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let failing: Vec<String> = results.iter().filter(|r| !r.2.passed).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failing.len(),
        results.len(),
        if failing.is_empty() { String::new() } else { format!("; failing: {}", failing.join(", ")) }
    );
    let strict = std::env::var_os("SATSWARM_ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    if strict && !failing.is_empty() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
