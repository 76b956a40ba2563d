//! Experiment driver for the `csbeam` toolkit: a JSON run config in, maps,
//! metrics, slices, rasters and a manifest out.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;

pub use config::RunConfig;
pub use error::CliError;
