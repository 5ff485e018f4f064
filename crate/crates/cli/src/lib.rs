//! Command-line front end: config handling, ingestion and reproducible runs.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod spec;

pub use error::{CliError, CliResult, Failure};
pub use ingest::{ingest_returns, Ingested, Replacement, ZeroPolicy};
pub use pipeline::{pipeline_run, ComparisonRow, PipelineConfig, PipelineOutcome};
