//! Ensemble runs of the truncated scheme: configuration, parallel
//! execution, CSV and manifest output, and SVG plots.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod output;
pub mod paper;
pub mod plot;

pub use config::{Overrides, RunConfig};
pub use ensemble::{run_ensemble, RunOutput};
pub use error::CliError;
