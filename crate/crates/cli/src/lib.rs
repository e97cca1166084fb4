//! Configuration-driven experiment runner for the `prehistory` library.

pub mod config;
pub mod error;
pub mod manifest;
pub mod run;

pub use config::{load_config, parse_config, validate, Experiment, RunConfig};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use run::run;
