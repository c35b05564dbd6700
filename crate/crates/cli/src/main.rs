//! `bvsol`: batch runner for viscous approximations of rate-independent
//! systems.
//!
//! Exit codes: 0 all verdicts pass, 1 a diagnostic failed, 2 solver or
//! output failure, 3 configuration error, 4 infeasible transition.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("infeasible transition: {0}")]
    Infeasible(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Solver(_) | CliError::Output(_) => 2,
            CliError::Infeasible(_) => 4,
        }
    }
}

impl From<bvsol_core::Error> for CliError {
    fn from(e: bvsol_core::Error) -> Self {
        use bvsol_core::Error as E;
        match e {
            E::InfeasibleTransition(_) => CliError::Infeasible(e.to_string()),
            E::InvalidParameter(_) | E::UnsupportedModel(_) | E::WitnessRequired(_) | E::GridMismatch => {
                CliError::Config(e.to_string())
            }
            E::Output(_) => CliError::Output(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bvsol",
    version,
    about = "Viscous approximations of rate-independent systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration, or a run manifest to reproduce.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Start from a named preset.
    #[arg(long)]
    preset: Option<String>,
    /// `section.key=value`, applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::load(self.config.as_deref(), self.preset.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one viscous problem and check its diagnostics.
    Run(Common),
    /// Solve every cell of `scheme.sweep` and tabulate convergence.
    Sweep(Common),
    /// Optimise a jump transition at frozen time.
    Transition(Common),
    /// Recompute the diagnostics of a stored run in `--out`.
    Diagnose {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Rewrite the CSV artifacts of a stored run.
    Export {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Destination directory (default: `--out`).
        #[arg(long)]
        to: Option<PathBuf>,
        /// Node stride of `states.csv`.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Print the resolved configuration as TOML.
    Config(Common),
}

/// `None` for commands without a verdict.
fn execute(cmd: Command) -> Result<Option<bool>, CliError> {
    match cmd {
        Command::Run(c) => commands::run(&c.config()?, &c.out, c.workers).map(Some),
        Command::Sweep(c) => commands::sweep(&c.config()?, &c.out, c.workers).map(Some),
        Command::Transition(c) => commands::transition(&c.config()?, &c.out).map(Some),
        Command::Diagnose { out, workers } => commands::diagnose(&out, workers).map(Some),
        Command::Export { out, to, stride } => commands::export(&out, to.as_ref(), stride).map(|_| None),
        Command::Config(c) => {
            print!("{}", c.config()?.to_toml()?);
            Ok(None)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(true)) => {
            println!("PASS");
            ExitCode::SUCCESS
        }
        Ok(Some(false)) => {
            println!("FAIL");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("bvsol: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
