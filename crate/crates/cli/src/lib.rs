//! Scenario ingestion, subcommands and result serialization for the
//! `districting` binary.

pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;

pub use commands::RunOptions;
pub use error::{CliError, CliResult};
pub use output::Bundle;
pub use scenario::Scenario;
