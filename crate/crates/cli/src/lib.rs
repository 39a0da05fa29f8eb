//! Command-line driver for the shrubland mapping pipeline.

pub mod cli;
pub mod config;
pub mod failure;
pub mod ops;
pub mod pipeline;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, Artifacts, STAGES};
