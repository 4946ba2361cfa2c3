//! Command-line front end: configuration, stage orchestration and the report bundle.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::{run_audit, RunArtifacts, RunSummary, Stage};
