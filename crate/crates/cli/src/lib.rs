//! Experiment runner: config-driven training, evaluation and diagnostics.

pub mod bundle;
pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at step {step}: non-finite {what}")]
    Divergence { step: usize, what: String },
    #[error(transparent)]
    Core(minmin_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<minmin_core::Error> for CliError {
    fn from(e: minmin_core::Error) -> Self {
        match e {
            minmin_core::Error::Divergence { step, what } => CliError::Divergence { step, what },
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 2 for divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Divergence { .. } => 2,
            _ => 1,
        }
    }
}
