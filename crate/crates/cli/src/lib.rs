//! Batch front end for the particle solver and optimizer.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_check, cmd_optimize, cmd_simulate, Run, Suite};
pub use config::RunConfig;
pub use error::CliError;
