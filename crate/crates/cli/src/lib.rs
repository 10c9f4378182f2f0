//! Experiment driver for `dspp-core`: configuration, file layout and the
//! experiment suites behind the `dspp` binary.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod selftest;

pub use config::ExperimentConfig;

use thiserror::Error;

/// Failures grouped by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<dspp_core::Error> for CliError {
    fn from(e: dspp_core::Error) -> Self {
        use dspp_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Integration { .. } | E::Divergence { .. } | E::NoConvergence { .. } => {
                CliError::Numerical(msg)
            }
            E::Io(_)
            | E::Parse(_)
            | E::Checkpoint(_)
            | E::CheckpointVersion { .. }
            | E::Nonconforming(_) => CliError::Io(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
