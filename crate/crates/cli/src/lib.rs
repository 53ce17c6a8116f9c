//! Batch driver for the stepleak attacks: one declarative config file per
//! experiment, artifacts written to an output directory.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_config, validate_config, ConfigError, Diagnostic, ExperimentConfig};
pub use run::{run, CliError, Overrides, Subcommand};
