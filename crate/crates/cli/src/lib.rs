//! Experiment runner: a cached mesh → solve → measure → variance →
//! classical pipeline driven by one JSON config, plus single-stage commands.

pub mod commands;
pub mod config;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use pipeline::{run, RunReport};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("invalid config at {path}: {msg}")]
    ConfigInvalid { path: String, msg: String },
    #[error("stage {stage} failed: {msg}")]
    StageFailed { stage: String, msg: String },
}

impl RunError {
    /// 2 for configuration errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::ConfigInvalid { .. } => 2,
            RunError::StageFailed { .. } => 3,
        }
    }
}

/// Caps rayon's global pool at `POLYQ_THREADS` when set.
pub fn init_threads() -> Result<(), RunError> {
    let Ok(v) = std::env::var("POLYQ_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| RunError::ConfigInvalid { path: "POLYQ_THREADS".into(), msg: format!("expected a positive integer, got {v:?}") })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| RunError::ConfigInvalid { path: "POLYQ_THREADS".into(), msg: e.to_string() })
}
