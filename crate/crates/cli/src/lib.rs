//! Config-driven experiments over the `lowswitch` crate.
//!
//! An experiment is one run template crossed with a list of criteria and a
//! list of seeds. [`runner::run_experiment`] executes every cell on a worker
//! pool and writes per-run JSONL logs plus aggregate files; the aggregate is
//! computed single-threaded in a fixed order, so the files do not depend on
//! the pool width.

pub mod config;
pub mod report;
pub mod runner;
pub mod selftest;

use std::path::PathBuf;

pub use config::{load_config, parse_config, ExperimentSpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Every problem found while validating input.
    #[error("invalid input:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit status: 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            _ => 2,
        }
    }
}

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "LOWSWITCH_OUT";
