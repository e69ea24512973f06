//! Batch driver: reads a JSON run config, executes one pipeline or a sweep of
//! independent pipelines, and writes CSV/JSON artifacts plus a manifest.

pub mod config;
pub mod run;
pub mod sweep;

use std::fmt;

pub use config::{Command, RunConfig};
pub use run::{run, RunManifest};
pub use sweep::{sweep, SweepSummary};

/// Environment override for the sweep thread count.
pub const THREADS_ENV: &str = "COARSELAT_THREADS";

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(coarselat_core::Error),
    Io(std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config error: {m}"),
            RunError::Numerical(e) => write!(f, "numerical failure: {e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<coarselat_core::Error> for RunError {
    fn from(e: coarselat_core::Error) -> Self {
        RunError::Numerical(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Exit status for a finished run whose checks may have failed.
pub const EXIT_INVARIANT: i32 = 4;

/// Thread count from the environment override, else the config.
pub fn resolve_threads(config: &RunConfig) -> Result<usize, RunError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(RunError::Config(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(config.threads),
    }
}
