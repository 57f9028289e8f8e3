//! Experiment harness: configuration, repeated evaluation, CSV and SVG output.

pub mod commands;
pub mod config;
pub mod eval;
pub mod plot;
pub mod stats;

use std::path::{Path, PathBuf};
use swarmopt::seed::derive_seed;
use swarmopt::CoreError;
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(CoreError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 for configuration and file problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_)
            | CoreError::DimensionMismatch { .. }
            | CoreError::CheckpointMismatch(_)
            | CoreError::Parse(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e),
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

const BATTERY_TAG: u64 = 10;
const START_TAG: u64 = 11;

/// Seed of test function `j`.
pub fn battery_seed(seed: u64, j: usize) -> u64 {
    derive_seed(seed, &[BATTERY_TAG, j as u64])
}

/// Start seed of repeat `r` on test function `j`; shared by every method.
pub fn start_seed(seed: u64, r: usize, j: usize) -> u64 {
    derive_seed(seed, &[START_TAG, r as u64, j as u64])
}
