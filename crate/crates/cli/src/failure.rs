use std::fmt;

/// Input file missing or unreadable, or an output file could not be written.
pub const MISSING: u8 = 1;
/// Schema, validation or hypothesis failure.
pub const INVALID: u8 = 2;
/// The numerics failed to deliver a result.
pub const NUMERIC: u8 = 3;

/// A failed command together with its process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn missing(message: impl Into<String>) -> Self {
        Failure { code: MISSING, message: message.into() }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Failure { code: INVALID, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Failure { code: NUMERIC, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
