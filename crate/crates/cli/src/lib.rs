//! Command-line harness around the `graphdiff` library: training runs,
//! trajectory sampling with scene graphics, evaluation and baseline reports.

pub mod args;
pub mod commands;
pub mod render;

use std::fmt;

use graphdiff::graph::Violation;

pub use args::{Cli, Command};
pub use commands::run;

/// Process exit statuses.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const NUMERIC: u8 = 4;
    pub const IO: u8 = 5;
    /// Invalid inputs other than the config: targets, checkpoints.
    pub const DATA: u8 = 6;
}

/// A configuration that failed to parse or validate.
#[derive(Debug)]
pub struct ConfigError {
    pub source_name: String,
    pub violations: Vec<Violation>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration {}:", self.source_name)?;
        for v in &self.violations {
            write!(f, "\n  [{}] {}", v.code, v.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Maps an error chain to the exit status reported by the binary.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return exit::CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<graphdiff::Error>() {
            return match e {
                graphdiff::Error::Numeric { .. } => exit::NUMERIC,
                graphdiff::Error::Io { .. } => exit::IO,
                _ => exit::DATA,
            };
        }
        if cause.is::<std::io::Error>() {
            return exit::IO;
        }
    }
    exit::FAILURE
}
