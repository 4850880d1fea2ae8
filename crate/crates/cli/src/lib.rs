//! Orchestration behind the `ersc` binary: configuration, command dispatch and report files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

pub use config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Eigen,
    Hjb,
    Game,
    SweepEps,
    SweepKappa,
    Simulate,
    VerifyVar,
    CheckAssumptions,
    RepCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Eigen => "eigen",
            Command::Hjb => "hjb",
            Command::Game => "game",
            Command::SweepEps => "sweep-eps",
            Command::SweepKappa => "sweep-kappa",
            Command::Simulate => "simulate",
            Command::VerifyVar => "verify-var",
            Command::CheckAssumptions => "check-assumptions",
            Command::RepCheck => "rep-check",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    /// Single-line prefix that identifies the failure class.
    pub fn prefix(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ersc:error:config:",
            CliError::NonConvergence(_) => "ersc:error:nonconvergence:",
            CliError::Solver(_) => "ersc:error:solver:",
            CliError::Io(_) => "ersc:error:io:",
        }
    }
}

impl From<ersc_core::Error> for CliError {
    fn from(e: ersc_core::Error) -> Self {
        use ersc_core::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidInput(_) | E::Config(_) | E::Monotonicity { .. } | E::Assumption(_) => CliError::Config(msg),
            E::NonConvergence { .. } | E::Linalg(_) => CliError::NonConvergence(msg),
            E::Reducible(_) | E::Simulation(_) => CliError::Solver(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// A table destined for a CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Series {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: impl IntoIterator<Item = f64>) {
        self.rows.push(row.into_iter().map(fmt_num).collect());
    }

    pub fn push_raw(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

/// Shortest round-trip decimal rendering, independent of locale.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: Command,
    pub config_digest: String,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub workers: usize,
    pub results: Value,
    pub wall_times: Value,
    #[serde(skip)]
    pub series: Vec<Series>,
}

/// What a command hands back to the orchestrator.
pub struct CommandOutput {
    pub results: Value,
    pub series: Vec<Series>,
    pub wall_times: Vec<(String, f64)>,
}

/// Writes each named series as a CSV; series without rows are skipped with a notice.
pub fn emit_plot_data(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for s in &report.series {
        if s.rows.is_empty() {
            log::info!("series {} has no rows; skipped", s.file);
            continue;
        }
        let path = dir.join(&s.file);
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        writeln!(f, "{}", s.header.join(","))?;
        for row in &s.rows {
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Runs one command with the configured worker pool and writes the report files.
pub fn run(command: Command, cfg: &RunConfig, out_dir: &Path, workers: usize) -> Result<RunReport, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build a pool with {workers} workers: {e}")))?;
    let start = Instant::now();
    let output = pool.install(|| commands::dispatch(command, cfg))?;
    let mut times = serde_json::Map::new();
    for (k, v) in output.wall_times {
        times.insert(k, Value::from(v));
    }
    times.insert("total_s".into(), Value::from(start.elapsed().as_secs_f64()));
    let report = RunReport {
        command,
        config_digest: cfg.digest(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.simulation.as_ref().map(|s| s.config.seed),
        workers,
        results: output.results,
        wall_times: Value::Object(times),
        series: output.series,
    };
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), cfg.canonical())?;
    if cfg.output.wants("json") {
        let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(out_dir.join(format!("{}.json", command.name())), json + "\n")?;
    }
    if cfg.output.wants("csv") {
        emit_plot_data(&report, out_dir)?;
    }
    Ok(report)
}
