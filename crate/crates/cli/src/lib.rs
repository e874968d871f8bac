//! Configuration, parameter files and experiment commands for the `taskrel`
//! binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod params;

pub use error::{CliError, Result};
