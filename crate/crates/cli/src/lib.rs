//! Scenario-driven driver for the sorting cell, the digester and the
//! setpoint optimizer.
//!
//! Every command resolves and validates the whole configuration first, runs
//! in memory, and only then creates the output directory and writes files.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{cmd_digest, cmd_optimize, cmd_pipeline, cmd_sortline, DigestOptions, OptimizeOptions};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}
