//! Command-line front end: flag parsing, run configuration and the subcommands.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

pub mod cli;
pub mod commands;
pub mod config;

pub use cli::{Cli, Command};
pub use commands::{run, Failure};
pub use config::{EvalOptions, RunConfig};
