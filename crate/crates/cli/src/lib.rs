//! Command-line front end: configuration, data directory layout, audit log
//! and the `ingest`, `index`, `ask`, `eval` and `verify-file` commands.

pub mod audit;
pub mod commands;
pub mod config;
pub mod engine;
pub mod lock;
pub mod store;

pub use commands::{run_command, run_command_with, EXIT_FAILURE, EXIT_OK, EXIT_REFUSED, EXIT_USAGE};
