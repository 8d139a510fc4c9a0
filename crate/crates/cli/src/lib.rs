//! Library behind the `lowrank` binary.

pub mod analyze;
pub mod commands;
pub mod csvio;
pub mod error;
pub mod verify;

pub use commands::{configure_threads, run, Cli, Command};
pub use error::{CliError, Result};
