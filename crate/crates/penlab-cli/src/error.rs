//! Driver-level errors and their process exit codes.

use std::fmt;

/// What went wrong, bucketed by exit code.
///
/// Validation problems (bad config, unknown keys, out-of-range parameters)
/// exit with 2 before any computation starts.  Anything that fails after
/// validation — a solver that does not converge, an output file that cannot
/// be written — exits with 3.  Exit 4 is reserved for `verify` runs where
/// every stage executed but some criterion failed; that path never goes
/// through this type.
#[derive(Debug)]
pub enum CliError {
    /// The config (or a describe argument) is malformed; the message names
    /// the offending key or flag.
    Validation(String),
    /// A solve, sweep, or write failed after the config was accepted.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<penlab_core::Error> for CliError {
    fn from(e: penlab_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
