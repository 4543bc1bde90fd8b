//! Library side of the `msflow` command: configuration parsing, validation
//! and the `run`, `translator` and `audit` subcommands.

pub mod commands;
pub mod config;

pub use commands::{execute, Command, Failure, Options, EXIT_AUDIT, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER};
pub use config::{ConfigError, ExperimentConfig};
