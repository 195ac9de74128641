//! Batch driver: reads an experiment config, runs its tasks against the `blockspin`
//! library and writes a JSON report plus CSV tables.

pub mod config;
pub mod error;
pub mod report;
pub mod tasks;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use config::{parse_config, ExperimentConfig};
pub use error::CliError;
pub use report::{emit_report, Report, TaskVerdict};

pub fn config_hash(config: &ExperimentConfig) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(config)?)))
}

/// Run every task of `config` in order, or concurrently when `parallel` is set.
pub fn run_experiment(config: &ExperimentConfig, parallel: bool) -> Result<Report, CliError> {
    let model = config.model()?;
    let run = |(i, t): (usize, &config::TaskConfig)| {
        log::info!("task {i}: {}", t.name());
        tasks::run_task(config, &model, i, t)
    };
    let tasks = if parallel {
        config.tasks.par_iter().enumerate().map(run).collect::<Result<Vec<_>, _>>()?
    } else {
        config.tasks.iter().enumerate().map(run).collect::<Result<Vec<_>, _>>()?
    };
    Ok(Report {
        tool: "blockspin".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_hash(config)?,
        config: config.clone(),
        all_passed: tasks.iter().all(|t| t.verdict != TaskVerdict::Fail),
        tasks,
    })
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}
