//! Library side of the `crcsf` command-line tool.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use error::CliError;
