//! Experiment pipeline for generative policy networks: configuration, file
//! formats, the evaluation protocols and the `gpn` command-line tool.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod experiments;

pub use error::{Error, Result};
