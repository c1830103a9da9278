//! Experiment runner for volume-preserving DA maps of `T³`.

pub mod compare;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;

use std::path::PathBuf;

use config::{ExperimentConfig, Scenario};
use error::CliError;
use output::RunManifest;

/// Environment variable consulted for the worker count when `--workers` is
/// absent.
pub const WORKERS_ENV: &str = "DATORUS_WORKERS";
pub const DEFAULT_OUT: &str = "datorus-out";

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// Flag, then environment, then config, then machine parallelism.
pub fn resolve_workers(flag: Option<usize>, env: Option<&str>, config: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return if n > 0 { Ok(n) } else { Err(CliError::Config("--workers must be positive".into())) };
    }
    if let Some(s) = env {
        return match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{WORKERS_ENV}={s:?} is not a positive integer"))),
        };
    }
    Ok(config.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

/// Loads and validates everything, then runs the scenario on a dedicated
/// thread pool.
pub fn run_scenario(scenario: Scenario, o: &Overrides) -> Result<RunManifest, CliError> {
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::from_file(p, scenario)?,
        None => ExperimentConfig::defaults(scenario),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if o.out.is_some() {
        cfg.out = o.out.clone();
    }
    let env = std::env::var(WORKERS_ENV).ok();
    let workers = resolve_workers(o.workers, env.as_deref(), cfg.workers)?;
    pipeline::build_map(&cfg)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| pipeline::run(&cfg, out, workers))
}
