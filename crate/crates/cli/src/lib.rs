//! Experiment driver for `metacl`: configuration files, checkpoints,
//! training logs, and forgetting reports.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod report;

pub use config::ExperimentConfig;
