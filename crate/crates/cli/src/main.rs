//! `stopsurf`: solve, check, boundary and simulate pipelines over problem
//! files.
//!
//! Exit codes: 0 success, 1 input error, 2 result flagged for quality
//! (non-converged solve, failed hypothesis, discontinuity flag).

mod args;
mod commands;
mod gridio;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct CliError(String);

impl CliError {
    pub fn input(msg: impl Into<String>) -> CliError {
        CliError(msg.into())
    }
}

/// Result of a command that ran to completion.
pub enum Outcome {
    Ok,
    Flagged(String),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("STOPSURF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("STOPSURF_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::input(e.to_string()))
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Check(a) => commands::check(&a),
        Command::Boundary(a) => commands::boundary(&a),
        Command::Simulate(a) => commands::simulate(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Flagged(msg)) => {
            eprintln!("flagged: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
