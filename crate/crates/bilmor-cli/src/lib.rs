//! Command line front end for the [`bilmor`] model reduction library.
//!
//! A run is described by a flat key=value configuration, assembled from an
//! optional config file and `--set` overrides, and executed by one of the
//! subcommands. Every command prints a short summary to stdout and writes
//! its detailed results as CSV next to any model files it produces:
//!
//! * [`io`]: Matrix Market and plain-text vector files, written atomically
//!   and with enough digits to round-trip every f64,
//! * [`config`]: the key=value schema, defaults, and override order,
//! * [`commands`]: the operations behind the subcommands and the demo
//!   system generator.
//!
//! Outputs are deterministic: the same configuration and seed produce
//! byte-identical files, so runs can be diffed directly.

use std::fmt;

pub mod commands;
pub mod config;
pub mod io;

pub use commands::{run, Command};
pub use config::RunConfig;

/// A failed run, split by who has to act on it.
///
/// Validation failures (exit code 2) mean the inputs never made it into a
/// computation: unreadable or malformed files, unknown or missing
/// configuration keys, out-of-range settings. Numerical failures (exit
/// code 3) mean the computation itself refused: singular shifts, unstable
/// systems where a norm does not exist, size limits.
#[derive(Debug)]
pub enum RunError {
    Validation(String),
    Numerical(String),
}

impl RunError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Validation(msg) => write!(f, "{msg}"),
            RunError::Numerical(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<bilmor::Error> for RunError {
    fn from(err: bilmor::Error) -> Self {
        match err {
            bilmor::Error::InvalidArgument(_) | bilmor::Error::DimensionMismatch(_) => {
                RunError::Validation(err.to_string())
            }
            bilmor::Error::Singular(_)
            | bilmor::Error::Unstable(_)
            | bilmor::Error::Numerical(_)
            | bilmor::Error::SizeLimit(_) => RunError::Numerical(err.to_string()),
        }
    }
}
