//! Config-driven prevalence mapping pipeline.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
