//! Command implementations behind the `lockloop` binary.

pub mod cli;
pub mod commands;
pub mod error;
pub mod output;

pub use cli::run;
pub use error::CliError;
