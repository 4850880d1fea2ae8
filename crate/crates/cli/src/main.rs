use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ersc_cli::{run, CliError, Command, RunConfig};

/// Solver and verification harness for ergodic risk-sensitive control.
#[derive(Parser, Debug)]
#[command(name = "ersc", version)]
struct Args {
    command: Command,
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `ERSC_WORKERS` and `output.workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Simulation seed; overrides `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn workers(args: &Args, cfg: &RunConfig) -> Result<usize, CliError> {
    let env = match std::env::var("ERSC_WORKERS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("ERSC_WORKERS = {v:?} is not a positive integer")))?,
        ),
        Err(_) => None,
    };
    let n = args
        .workers
        .or(env)
        .or(cfg.output.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if n == 0 {
        return Err(CliError::Config("worker count must be at least 1".into()));
    }
    Ok(n)
}

fn main_inner(args: &Args) -> Result<bool, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        match cfg.simulation.as_mut() {
            Some(s) => s.config.seed = seed,
            None => log::warn!("--seed ignored: the configuration has no [simulation] block"),
        }
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let n = workers(args, &cfg)?;
    let report = run(args.command, &cfg, &out, n)?;
    println!(
        "{}",
        serde_json::to_string(&report.results).map_err(|e| CliError::Io(e.to_string()))?
    );
    Ok(report.results.get("passed").and_then(|v| v.as_bool()).unwrap_or(true))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{} {first}", CliError::Config(String::new()).prefix());
            return ExitCode::from(2);
        }
    };
    match main_inner(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("ersc: {} check failed; see the report", args.command.name());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{} {}", e.prefix(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
