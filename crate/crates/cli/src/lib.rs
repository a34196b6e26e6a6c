//! Configuration, orchestration and reporting for the `mvsim` command.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{validate_config, validate_config_str, Command, ModelRef, RunConfig};
pub use error::CliError;
pub use run::{run, RunOutcome, MANIFEST_FILE};
