//! End-to-end checks of the command-line contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use satswarm::orbit::{propagate, ControlAccel, LvlhState, OrbitParams};
use satswarm::runtime::rows::read_rows;

const TINY: &str = r#"
[run]
seed = 5
checkpoint_interval = 64
budget = 0
eval_runs = 4

[env]
T0 = 10

[model]
d_model = 8
n_heads = 2
n_blocks_enc = 1
n_blocks_dec = 1
d_ff = 12
window = 2

[train]
n_envs = 2
rollout_len = 16
e = 16
ppo_epochs = 1
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_satswarm"))
}

/// Writes `config` with its output directory inside `dir`.
fn config_in(dir: &Path, name: &str, config: &str) -> PathBuf {
    let out = dir.join(name);
    let text = config.replacen("[run]\n", &format!("[run]\noutput_dir = \"{}\"\n", out.display()), 1);
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn checkpoints(out: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        fs::read_dir(out.join("checkpoints")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn zero_budget_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "zero", TINY);
    run(bin().arg("train").arg(&cfg));
    let out = dir.path().join("zero");
    assert_eq!(checkpoints(&out), vec!["step-000000000000.ckpt"]);
    let metrics = read_rows(&out.join("train_metrics.csv")).unwrap();
    assert!(metrics.rows.is_empty());
    assert!(metrics.preamble.starts_with("# schema=train_metrics version=1 config="));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = config_in(dir.path(), "a", TINY);
    let b = config_in(dir.path(), "b", TINY);
    run(bin().args(["train", "--budget", "200"]).arg(&a));
    run(bin().args(["train", "--budget", "100"]).arg(&b));
    let first = checkpoints(&dir.path().join("b"));
    run(bin().args(["train", "--budget", "200"]).arg(&b));
    let second = checkpoints(&dir.path().join("b"));
    assert!(second.len() > first.len());
    let steps = |out: &str| {
        let t = read_rows(&dir.path().join(out).join("train_metrics.csv")).unwrap();
        let c = t.column("env_steps").unwrap();
        t.rows.iter().map(|r| r[c].parse::<u64>().unwrap()).collect::<Vec<_>>()
    };
    let resumed = steps("b");
    assert!(resumed.windows(2).all(|w| w[0] < w[1]), "{resumed:?}");
    assert!(*resumed.last().unwrap() >= 200);
    for file in ["train_metrics.csv", "train_episodes.csv"] {
        let x = fs::read(dir.path().join("a").join(file)).unwrap();
        let y = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(x, y, "{file} differs after resume");
    }
    assert_eq!(checkpoints(&dir.path().join("a")).last(), second.last());
}

#[test]
fn identical_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = config_in(dir.path(), "a", TINY);
    let b = config_in(dir.path(), "b", TINY);
    run(bin().args(["train", "--budget", "96"]).arg(&a));
    run(bin().args(["train", "--budget", "96"]).arg(&b));
    let x = fs::read(dir.path().join("a/train_metrics.csv")).unwrap();
    let y = fs::read(dir.path().join("b/train_metrics.csv")).unwrap();
    assert_eq!(x, y);
    let names = checkpoints(&dir.path().join("a"));
    assert_eq!(names, checkpoints(&dir.path().join("b")));
    let last = names.last().unwrap();
    let ckpt = |d: &str| fs::read(dir.path().join(d).join("checkpoints").join(last)).unwrap();
    assert_eq!(ckpt("a"), ckpt("b"));
}

#[test]
fn training_with_a_different_seed_diverges() {
    let dir = tempfile::tempdir().unwrap();
    let a = config_in(dir.path(), "a", TINY);
    let b = config_in(dir.path(), "b", TINY);
    run(bin().args(["train", "--budget", "32"]).arg(&a));
    run(bin().args(["train", "--budget", "32", "--seed", "6"]).arg(&b));
    let x = fs::read(dir.path().join("a/train_metrics.csv")).unwrap();
    let y = fs::read(dir.path().join("b/train_metrics.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn evaluation_rows_agree_with_the_stats_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "eval", TINY);
    run(bin().arg("train").arg(&cfg));
    let ck = dir.path().join("eval/checkpoints/step-000000000000.ckpt");
    run(bin().arg("evaluate").arg(&cfg).arg("--checkpoint").arg(&ck).args(["--runs", "1"]));
    let episodes = read_rows(&dir.path().join("eval/eval/eval_episodes.csv")).unwrap();
    assert_eq!(episodes.rows.len(), 1);

    run(bin().arg("evaluate").arg(&cfg).arg("--checkpoint").arg(&ck).args(["--runs", "6"]));
    let episodes = read_rows(&dir.path().join("eval/eval/eval_episodes.csv")).unwrap();
    let stats = read_rows(&dir.path().join("eval/eval/eval_stats.csv")).unwrap();
    assert_eq!(episodes.rows.len(), 6);
    assert_eq!(stats.rows.len(), 1);
    let col = |t: &satswarm::runtime::rows::RowTable, name: &str| t.column(name).unwrap();
    let count = |name: &str| episodes.rows.iter().filter(|r| &r[col(&episodes, name)] == "true").count().to_string();
    assert_eq!(stats.rows[0][col(&stats, "n_runs")], *"6");
    assert_eq!(stats.rows[0][col(&stats, "pursuit_successes")], count("pursuit_success"));
    assert_eq!(stats.rows[0][col(&stats, "attachment_successes")], count("attachment_success"));
    let collisions: f64 = episodes.rows.iter().map(|r| r[col(&episodes, "collisions")].parse::<f64>().unwrap()).sum();
    let mean: f64 = stats.rows[0][col(&stats, "mean_collisions")].parse().unwrap();
    assert!((mean - collisions / 6.0).abs() < 1e-12);
    let incomplete = read_rows(&dir.path().join("eval/eval/incomplete.csv")).unwrap();
    assert_eq!(incomplete.rows.len(), 11);
}

#[test]
fn missing_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "missing", TINY);
    let ck = dir.path().join("nowhere/step.ckpt");
    let out = bin().arg("evaluate").arg(&cfg).arg("--checkpoint").arg(&ck).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&ck.display().to_string()));
}

#[test]
fn incompatible_checkpoint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "small", TINY);
    run(bin().arg("train").arg(&cfg));
    let ck = dir.path().join("small/checkpoints/step-000000000000.ckpt");
    let bigger =
        config_in(dir.path(), "big", &TINY.replace("d_model = 8", "d_model = 16").replace("d_ff = 12", "d_ff = 24"));
    let out = bin().arg("evaluate").arg(&bigger).arg("--checkpoint").arg(&ck).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("layout hash"));
}

#[test]
fn config_errors_exit_with_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "bad", &TINY.replace("[env]\n", "[env]\nthrust_boost = 2\n"));
    let out = bin().arg("train").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("thrust_boost"));
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn trajectory_rows_are_bounded_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "sim", TINY);
    run(bin().arg("simulate").arg(&cfg).args(["--policy", "random", "--episodes", "1"]));
    let path = dir.path().join("sim/trajectory.csv");
    let first = fs::read(&path).unwrap();
    let table = read_rows(&path).unwrap();
    // Default team: 3 pursuers and 1 evader.
    assert!(!table.rows.is_empty() && table.rows.len() <= 10 * 4);
    run(bin().arg("simulate").arg(&cfg).args(["--policy", "random", "--episodes", "1"]));
    assert_eq!(fs::read(&path).unwrap(), first);

    run(bin().arg("train").arg(&cfg));
    let ck = dir.path().join("sim/checkpoints/step-000000000000.ckpt");
    run(bin().arg("simulate").arg(&cfg).arg("--checkpoint").arg(&ck));
    let a = fs::read(&path).unwrap();
    run(bin().arg("simulate").arg(&cfg).arg("--checkpoint").arg(&ck));
    assert_eq!(fs::read(&path).unwrap(), a);
}

#[test]
fn zero_thrust_trajectories_are_free_drift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "drift", &TINY.replace("[env]\n", "[env]\np_imp = 0.0\n"));
    run(bin().arg("simulate").arg(&cfg).args(["--policy", "zero"]));
    let table = read_rows(&dir.path().join("drift/trajectory.csv")).unwrap();
    let col = |n: &str| table.column(n).unwrap();
    let state = |r: &csv::StringRecord| {
        LvlhState::from_array(["x", "xdot", "y", "ydot", "z", "zdot"].map(|n| r[col(n)].parse::<f64>().unwrap()))
    };
    let orbit = OrbitParams::geo();
    let agents: Vec<String> = table.rows.iter().map(|r| r[col("agent")].to_string()).collect();
    for agent in ["0", "1", "2", "3"] {
        let rows: Vec<_> = table.rows.iter().zip(&agents).filter(|(_, a)| *a == agent).map(|(r, _)| r).collect();
        assert!(rows.len() > 1);
        let x0 = state(rows[0]);
        for r in &rows[1..] {
            assert!(r[col("ax")].parse::<f64>().unwrap() == 0.0);
            let t: f64 = r[col("t")].parse().unwrap();
            let expect = propagate(&x0, &ControlAccel::ZERO, t, &orbit).unwrap();
            let got = state(r);
            for (g, e) in got.to_array().iter().zip(expect.to_array()) {
                assert!((g - e).abs() < 1e-9, "agent {agent} t {t}: {g} vs {e}");
            }
        }
    }
}

#[test]
fn verify_passes() {
    let out = run(bin().arg("verify"));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7, "{text}");
}
