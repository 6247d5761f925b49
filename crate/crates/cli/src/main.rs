//! `disc`: fit, simulate, evaluate and diagnose sense-change models.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure of a command, mapped to the process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent arguments (exit 2).
    Usage(String),
    /// Validation or numerical failure (exit 1).
    Failed(disc_core::Error),
}

impl From<disc_core::Error> for CliError {
    fn from(e: disc_core::Error) -> Self {
        CliError::Failed(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Failed(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(&cli.common, a),
        Command::Simulate(a) => commands::simulate(&cli.common, a),
        Command::Evaluate(a) => commands::evaluate(&cli.common, a),
        Command::Diagnose(a) => commands::diagnose(&cli.common, a),
        Command::Elicit(a) => commands::elicit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("disc: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Failed(_) => ExitCode::from(1),
            }
        }
    }
}
