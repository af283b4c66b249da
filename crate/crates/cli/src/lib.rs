//! Config-driven experiments for the `mtgp` library.

pub mod config;
pub mod error;
pub mod experiment;
pub mod model;
pub mod output;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
