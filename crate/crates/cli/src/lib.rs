//! Library side of the `onsagernet` command-line tool: run configuration,
//! dataset and checkpoint files, and the subcommand implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::CliError;
