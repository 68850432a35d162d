//! Command suite for the mitodg toolkit: run configuration, subcommands and the
//! end-to-end pipeline.

pub mod cli;
pub mod commands;
pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{run_pipeline, PipelineOutcome, StageError};
