mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{EstimatorChoice, Rescale, RunConfig};
use error::CliError;

/// Simulation and estimation for regression discontinuity designs with
/// spillovers along the running variable.
///
/// Exit codes: 1 configuration, 2 solver, 3 malformed data, 4 estimator,
/// 5 experiment checks failed.
#[derive(Debug, Parser)]
#[command(name = "rdspill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the population, draw a sample and write `z,y` CSV plus a JSON sidecar.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run estimators on a `z,y` CSV and write JSON records.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorChoice>,
        /// Map raw z onto [-1, 1] with the cutoff at 0: `min,cutoff,max`.
        #[arg(long)]
        rescale: Option<Rescale>,
    },
    /// Cross-validate the spillover radius.
    Crossval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rescale: Option<Rescale>,
    },
    /// Run a Monte Carlo study and write report.json and report.csv.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out, seed } => commands::simulate(&load(&config, seed)?, out),
        Command::Estimate { config, data, out, seed, estimator, rescale } => {
            commands::estimate(&load(&config, seed)?, data, out, estimator, rescale)
        }
        Command::Crossval { config, data, out, seed, rescale } => {
            commands::crossval(&load(&config, seed)?, data, out, rescale)
        }
        Command::Experiment { config, out, seed } => commands::experiment(&load(&config, seed)?, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
