//! Command-line front end: config files, scenario presets and run artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;

pub use error::{CliError, Result};
