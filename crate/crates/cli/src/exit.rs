//! Process exit codes and their mapping from library errors.

use std::fmt;

use vikan::Error;

pub const FAILED: u8 = 1;
pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const NON_FINITE: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidConfig(_) => USAGE,
            Error::NonFiniteLoss { .. } => NON_FINITE,
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::TrailingBytes { .. }
            | Error::DimMismatch { .. }
            | Error::LabelOutOfRange { .. }
            | Error::CountMismatch { .. }
            | Error::Checkpoint(_)
            | Error::File { .. } => DATA,
            _ => FAILED,
        };
        Self::new(code, e.to_string())
    }
}

/// Output-side I/O failures (writing CSV, JSON, checkpoints).
pub fn io_failure(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::new(FAILED, format!("{}: {e}", path.display()))
}
