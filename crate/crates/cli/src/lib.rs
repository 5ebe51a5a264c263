//! Library side of the `d3po` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod ops;

pub use commands::{run, verification_reports, Cli};
pub use config::RunConfig;
pub use error::{CliError, Result};
