//! Command-line orchestration: configuration, presets, run directories and
//! the `train` / `simulate` / `evaluate` / `verify` / `rate-study` pipelines.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod presets;
pub mod verify;

pub use config::{parse, ExperimentConfig, Solver};
pub use error::CliError;
