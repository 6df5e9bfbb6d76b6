//! Experiment driver: dataset generation, teacher pretraining, co-learning
//! distillation, evaluation and ablation sweeps.
//!
//! [`run`] is the whole program; `main` only forwards `argv` and the exit code.

pub mod args;
pub mod commands;
pub mod config;
pub mod csv;

use std::ffi::OsString;
use std::io;

use clap::Parser;
use colearn_core::Error;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_INCOMPATIBLE: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

/// A failed command and the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Incompatible(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Missing(_) => EXIT_MISSING,
            Self::Incompatible(_) => EXIT_INCOMPATIBLE,
            Self::Numeric(_) => EXIT_NUMERIC,
            Self::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Argument(_) => Self::Usage(msg),
            Error::Shape(_) | Error::Config(_) => Self::Incompatible(msg),
            Error::NonFinite { .. } | Error::NonFiniteStep { .. } => Self::Numeric(msg),
            Error::Format { .. } => Self::Missing(msg),
            Error::Io(ref io) if io.kind() == io::ErrorKind::NotFound => Self::Missing(msg),
            Error::Io(_) | Error::Contract(_) => Self::Failure(msg),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (program name first), merges any `--config` file and runs the
/// selected command. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
