//! Config-driven experiment runner: `run`, `ablate-sources` and `report`.

pub mod commands;
pub mod config;

pub use commands::{cmd_ablate, cmd_report, cmd_run, mean_std, CliError, Metrics, SeedResult, METRICS_SCHEMA_VERSION};
pub use config::{ConfigError, ExperimentConfig, Loaded, Scheme, SEED_ENV};
