//! Command-line experiment runner.
//!
//! Each subcommand runs one experiment and writes a CSV (with the resolved
//! parameters as `#` lines), a TOML manifest that reproduces the run through
//! `--config`, and for channel experiments a JSONL message transcript.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{
    parse_config, ConfigError, Experiment, ExperimentConfig, Kind, ParamSpec, Value, DEFAULT_SEED,
};
pub use experiments::{execute, run_experiment, RunError, RunOutput, RunSummary};
pub use output::{sibling, write_csv, write_csv_file, Cell, Table};

#[derive(Parser, Debug)]
#[command(
    name = "phasesync",
    version,
    about = "Phase transfer and frequency locking simulations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Excited population after a pi/2 pulse versus drive phase, with fringe fit.
    BsoScan(RunArgs),
    /// Exact integrator, Floquet ladder and closed form through one pulse.
    SolverCompare(RunArgs),
    /// Phase-flip reversal fidelity on and off the half-period grid.
    Reversal(RunArgs),
    /// One protocol run: ledger of Alice's and Bob's outcomes per pair.
    Teleport(RunArgs),
    /// Two protocol runs and the recovered phase modulo pi.
    PhaseRecover(RunArgs),
    /// Spatial success profile and detuning estimate for one lock scan.
    LockScan(RunArgs),
    /// Closed-loop frequency locking history.
    LockLoop(RunArgs),
}

impl Command {
    pub fn split(self) -> (Experiment, RunArgs) {
        match self {
            Command::BsoScan(a) => (Experiment::BsoScan, a),
            Command::SolverCompare(a) => (Experiment::SolverCompare, a),
            Command::Reversal(a) => (Experiment::Reversal, a),
            Command::Teleport(a) => (Experiment::Teleport, a),
            Command::PhaseRecover(a) => (Experiment::PhaseRecover, a),
            Command::LockScan(a) => (Experiment::LockScan, a),
            Command::LockLoop(a) => (Experiment::LockLoop, a),
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Flat TOML file of key = value parameters (a manifest works too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output path; manifest and transcript are written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override one parameter, e.g. --set eta=0.05. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Resolve the config for one invocation.
pub fn resolve(experiment: Experiment, args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let text = match &args.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })?),
        None => None,
    };
    parse_config(
        experiment,
        text.as_deref(),
        args.seed,
        &args.set,
        args.out.clone(),
    )
}

/// Entry point shared by the binary and the tests.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (experiment, args) = cli.command.split();
    let cfg = match resolve(experiment, &args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&cfg) {
        Ok(summary) => {
            for (k, v) in &summary.lines {
                println!("{k}: {v}");
            }
            println!("wrote {}", cfg.output_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
