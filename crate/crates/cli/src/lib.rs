//! Command-line orchestration of the dynamic MRI toolkit: experiment
//! configuration, series and manifest files, and the simulate / train /
//! reconstruct / baseline / sweep / report commands.

pub mod app;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod seeds;
pub mod series_io;
pub mod simulate;
pub mod sweep;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
