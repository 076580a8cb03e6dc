//! Library side of the `wmx` binary: configuration resolution and subcommands.

pub mod commands;
pub mod config;

pub use commands::{run, Command};
pub use config::{Overrides, RunConfig};
