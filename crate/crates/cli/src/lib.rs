//! Synthetic scenes, file formats, configuration, dataset ingestion and
//! the `stereogc` command-line tool.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod io;
pub mod run;
pub mod synth;

pub use error::{HarnessError, HarnessResult};
