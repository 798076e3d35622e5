//! Comma-separated row files. Each file opens with a comment line naming
//! its schema, schema version and the config hash, then a column header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::RuntimeError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// One row per learner update.
    TrainMetrics,
    /// One row per finished training episode.
    TrainEpisodes,
    /// One row of aggregate evaluation statistics.
    EvalStats,
    /// One row per evaluation episode.
    EvalEpisodes,
    /// Fraction of evaluation runs still incomplete at each time.
    Incomplete,
    /// One row per agent per simulated step.
    Trajectory,
}

impl Schema {
    pub fn name(self) -> &'static str {
        match self {
            Self::TrainMetrics => "train_metrics",
            Self::TrainEpisodes => "train_episodes",
            Self::EvalStats => "eval_stats",
            Self::EvalEpisodes => "eval_episodes",
            Self::Incomplete => "incomplete",
            Self::Trajectory => "trajectory",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Self::TrainMetrics => &[
                "round",
                "env_steps",
                "role",
                "stage",
                "encoder_loss",
                "decoder_loss",
                "reg_loss",
                "entropy_bonus",
                "total_loss",
                "entropy",
                "grad_norm",
                "approx_kl",
                "clip_fraction",
                "mean_reward",
                "episodes",
                "capture_rate",
                "success_rate",
                "collisions_per_episode",
                "delta_v",
            ],
            Self::TrainEpisodes => &[
                "round",
                "env_steps",
                "role",
                "stage",
                "seed",
                "steps",
                "pursuer_return",
                "evader_return",
                "collisions",
                "boundary_exits",
                "capture_step",
                "success",
                "outcome",
                "attachment",
                "pursuer_delta_v",
                "evader_delta_v",
            ],
            Self::EvalStats => &[
                "pursuers",
                "evaders",
                "n_runs",
                "pursuit_successes",
                "attachment_successes",
                "pursuit_success_rate",
                "pursuit_half_width",
                "attachment_success_rate",
                "attachment_half_width",
                "mean_completion_time",
                "median_completion_time",
                "mean_collisions",
                "mean_team_delta_v",
            ],
            Self::EvalEpisodes => &[
                "episode",
                "seed",
                "steps",
                "pursuit_success",
                "attachment_success",
                "capture_time",
                "completion_time",
                "outcome",
                "pursuer_return",
                "collisions",
                "boundary_exits",
                "team_delta_v",
                "agent_delta_v",
            ],
            Self::Incomplete => &["t", "incomplete_fraction"],
            Self::Trajectory => &[
                "episode", "t", "agent", "role", "x", "xdot", "y", "ydot", "z", "zdot", "ax", "ay", "az", "reward",
                "phase", "events",
            ],
        }
    }

    pub fn preamble(self, config_hash: &str) -> String {
        format!("# schema={} version={SCHEMA_VERSION} config={config_hash}", self.name())
    }
}

/// Formats an optional value as an empty field when absent.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub struct RowWriter {
    path: PathBuf,
    schema: Schema,
    inner: csv::Writer<BufWriter<File>>,
}

impl RowWriter {
    /// Creates or truncates `path` and writes the preamble and header.
    pub fn create(path: &Path, schema: Schema, config_hash: &str) -> Result<Self, RuntimeError> {
        let mut file = BufWriter::new(File::create(path).map_err(RuntimeError::io(path))?);
        writeln!(file, "{}", schema.preamble(config_hash)).map_err(RuntimeError::io(path))?;
        let mut w = Self { path: path.to_path_buf(), schema, inner: csv::Writer::from_writer(file) };
        w.write(schema.columns())?;
        Ok(w)
    }

    /// Reopens an existing file for appending, keeping only the rows that
    /// pass `keep`. The preamble must match. A missing file is created.
    pub fn resume(
        path: &Path,
        schema: Schema,
        config_hash: &str,
        keep: impl Fn(&csv::StringRecord) -> bool,
    ) -> Result<Self, RuntimeError> {
        if !path.exists() {
            return Self::create(path, schema, config_hash);
        }
        let table = read_rows(path)?;
        if table.preamble != schema.preamble(config_hash) {
            return Err(RuntimeError::Rows {
                path: path.to_path_buf(),
                detail: format!("preamble `{}` does not match `{}`", table.preamble, schema.preamble(config_hash)),
            });
        }
        let mut w = Self::create(path, schema, config_hash)?;
        let width = schema.columns().len();
        // A row cut short by an interrupted write has the wrong width.
        for r in table.rows.iter().filter(|r| r.len() == width && keep(r)) {
            w.write(r)?;
        }
        Ok(w)
    }

    pub fn write<I, T>(&mut self, fields: I) -> Result<(), RuntimeError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| self.csv_error(e))
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn flush(&mut self) -> Result<(), RuntimeError> {
        self.inner.flush().map_err(RuntimeError::io(&self.path))
    }

    fn csv_error(&self, e: csv::Error) -> RuntimeError {
        RuntimeError::Rows { path: self.path.clone(), detail: e.to_string() }
    }
}

impl Drop for RowWriter {
    fn drop(&mut self) {
        let _ = self.inner.flush();
    }
}

/// Parsed row file.
#[derive(Debug, Clone)]
pub struct RowTable {
    pub preamble: String,
    pub columns: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

impl RowTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn read_rows(path: &Path) -> Result<RowTable, RuntimeError> {
    let text = std::fs::read_to_string(path).map_err(RuntimeError::io(path))?;
    parse_rows(&text).map_err(|detail| RuntimeError::Rows { path: path.to_path_buf(), detail })
}

/// Parses a row file's text. A torn final line from an interrupted write
/// ends the rows instead of failing.
pub fn parse_rows(text: &str) -> Result<RowTable, String> {
    let (preamble, body) = text.split_once('\n').ok_or("missing preamble")?;
    if !preamble.starts_with("# schema=") {
        return Err(format!("first line `{preamble}` is not a schema preamble"));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(body.as_bytes());
    let columns = reader.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    let rows = reader.records().map_while(Result::ok).collect();
    Ok(RowTable { preamble: preamble.to_string(), columns, rows })
}
