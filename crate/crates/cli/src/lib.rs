//! Experiment runner for the qcluster simulator: TOML-configured sweeps over
//! schedulers, loads and seeds with every cell persisted to disk.

pub mod config;
pub mod runner;

pub use config::{ExperimentConfig, SchedulerKind, SchedulerSpec, WorkloadConfig};
pub use runner::{cell_id, cells, replay, run_cell, run_experiment, schedule, CellManifest, ExperimentOutcome};
