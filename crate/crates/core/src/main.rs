use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use satswarm::runtime::{
    cmd_evaluate, cmd_simulate, cmd_train, cmd_verify, BaselinePolicy, PolicySource, RunConfig, RuntimeError,
};

#[derive(Debug, Parser)]
#[command(name = "satswarm", version, about = "Satellite-swarm pursuit-attachment training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train (or resume) the run described by a config file.
    Train {
        config: PathBuf,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `run.budget` (environment steps).
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Monte Carlo evaluation of a checkpoint.
    Evaluate {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `run.eval_runs`.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Roll episodes and export full trajectories.
    Simulate {
        config: PathBuf,
        #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
        checkpoint: Option<PathBuf>,
        /// Fixed controller instead of a checkpoint: random, zero or homing.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the oracle suites: dynamics, decoding, gradients,
    /// decomposition and queue safety.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load(path: &std::path::Path, seed: Option<u64>) -> Result<RunConfig, RuntimeError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, RuntimeError> {
    match cli.command {
        Command::Train { config, seed, budget } => {
            let mut cfg = load(&config, seed)?;
            if let Some(b) = budget {
                cfg.run.budget = b;
            }
            let summary = cmd_train(&cfg, &mut |line| eprintln!("{line}"))?;
            println!("trained to {} environment steps in {} rounds", summary.env_steps, summary.rounds);
        }
        Command::Evaluate { config, checkpoint, runs, seed } => {
            let cfg = load(&config, seed)?;
            let s = cmd_evaluate(&cfg, &checkpoint, runs)?;
            let pct = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{:.1}%", 100.0 * v));
            println!(
                "{} runs: pursuit {} (+/- {}), attachment {} (+/- {}); rows in {}",
                s.stats.n_runs,
                pct(s.stats.pursuit_success_rate),
                pct(s.stats.pursuit_half_width),
                pct(s.stats.attachment_success_rate),
                pct(s.stats.attachment_half_width),
                s.output_dir.display()
            );
        }
        Command::Simulate { config, checkpoint, policy, episodes, seed } => {
            let cfg = load(&config, seed)?;
            let baseline = policy.map(|p| p.parse::<BaselinePolicy>()).transpose()?;
            let source = match (&checkpoint, baseline) {
                (Some(path), _) => PolicySource::Checkpoint(path),
                (None, Some(b)) => PolicySource::Baseline(b),
                (None, None) => return Err(RuntimeError::Config("either --checkpoint or --policy is required".into())),
            };
            let path = cmd_simulate(&cfg, source, episodes)?;
            println!("trajectory written to {}", path.display());
        }
        Command::Verify { seed } => {
            let reports = cmd_verify(seed);
            for r in &reports {
                println!("{r}");
            }
            return Ok(reports.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors; usage errors exit 1.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
