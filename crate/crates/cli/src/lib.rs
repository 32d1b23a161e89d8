//! Experiment runner: scenario configs, stage pipelines, reports and plot data.

pub mod config;
pub mod pipeline;
pub mod plot;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing stage: {0}")]
    MissingStage(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingStage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}
