//! Configuration, scenario presets, run orchestration, diagnostics sinks and checkpoints for
//! the `taf` command-line tool.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod runner;
pub mod scenarios;
pub mod sinks;

pub use config::{parse_config, read_config, RunConfig, Scenario};
pub use error::{CheckpointError, CliError, ConfigError};
