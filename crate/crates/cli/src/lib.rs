//! The `arbor` reconstruction pipeline: configuration, stage runner and manifest.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fixture;
pub mod manifest;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::CliError;
pub use pipeline::{Runner, Stage, StageOutcome};

/// Loads `config`, applies overrides and runs `stage`.
pub fn run(stage: Stage, config: &std::path::Path, force: bool, seed: Option<u64>) -> Result<Runner, CliError> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut runner = Runner::new(cfg, force)?;
    runner.run(stage)?;
    Ok(runner)
}
