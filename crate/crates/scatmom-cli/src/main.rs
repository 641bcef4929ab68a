//! `scatmom` command-line front end. Exit codes: 0 success, 1 runtime
//! failure, 2 usage error.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod output;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};

/// Environment variable fixing the size of the worker pool.
const THREADS_VAR: &str = "SCATMOM_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    CheckFailed(String),
    #[error(transparent)]
    Signal(#[from] scatmom::signal::SignalError),
    #[error(transparent)]
    Wavelet(#[from] scatmom::wavelet::WaveletError),
    #[error(transparent)]
    Scatter(#[from] scatmom::scattering::ScatterError),
    #[error(transparent)]
    Process(#[from] scatmom::processes::ProcessError),
    #[error(transparent)]
    Estimation(#[from] scatmom::estimation::EstimationError),
    #[error(transparent)]
    Analysis(#[from] scatmom::analysis::AnalysisError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Input(_) => 2,
            _ => 1,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate_cmd(&a),
        Command::Scatter(a) => commands::scatter_cmd(&a),
        Command::Fit(a) => {
            let bytes = commands::fit_cmd(&a)?;
            if a.out.is_none() {
                std::io::stdout().write_all(&bytes)?;
            }
            Ok(())
        }
        Command::VerifyBank(a) => {
            let (bytes, pass) = commands::verify_bank_cmd(&a)?;
            if a.out.is_none() {
                std::io::stdout().write_all(&bytes)?;
            }
            if pass {
                Ok(())
            } else {
                Err(CliError::CheckFailed("filter-bank certificates failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
