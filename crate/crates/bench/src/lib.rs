//! Config-driven harnesses for the steering experiments: the conjugate 1-D
//! histograms, learning-rate sweeps and step-scaling tables on toy bead-chain
//! tasks, and the oracle verification suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod task;
pub mod verify;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub use config::{ExperimentConfig, ExperimentKind, SeedSpec};
pub use error::BenchError;

use output::Manifest;

/// Where an experiment wrote its artifacts.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

/// Validates, runs and writes an experiment. Nothing is written unless every
/// run succeeds.
pub fn run_config(cfg: &ExperimentConfig) -> Result<RunOutcome, BenchError> {
    cfg.validate()?;
    let started_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let out = experiments::run_experiment(cfg)?;
    let mut artifacts = out.artifacts;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        git_describe: output::GIT_DESCRIBE,
        kind: cfg.kind.as_str(),
        started_unix_s,
        wall_time_s: clock.elapsed().as_secs_f64(),
        config: cfg,
        files: artifacts.names().into_iter().map(String::from).collect(),
        summary: &out.summary,
    };
    artifacts.add("manifest.json", serde_json::to_vec_pretty(&manifest)?);
    let files = artifacts.write_all(&cfg.out_dir)?;
    Ok(RunOutcome {
        out_dir: cfg.out_dir.clone(),
        files,
        summary: out.summary,
    })
}

/// Loads a TOML config, applies overrides and runs it.
pub fn run_from_config(
    path: &Path,
    expected: Option<ExperimentKind>,
    out: Option<PathBuf>,
    seeds: Option<SeedSpec>,
    jobs: Option<usize>,
) -> Result<RunOutcome, BenchError> {
    let cfg = ExperimentConfig::load(path).map_err(|e| match e {
        BenchError::Io(io) => BenchError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })?;
    if let Some(kind) = expected {
        if cfg.kind != kind {
            return Err(BenchError::Validation(format!(
                "config kind is {}, this subcommand runs {}",
                cfg.kind.as_str(),
                kind.as_str()
            )));
        }
    }
    run_config(&cfg.with_overrides(out, seeds, jobs))
}
