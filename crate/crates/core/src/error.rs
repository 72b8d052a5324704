//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Errors reported by the numeric core.
///
/// Every variant carries enough context to point at the offending input
/// (sample id, individual id, or a shape description) so that callers can
/// surface actionable messages without re-deriving state.
#[derive(Debug, Clone, PartialEq)]
pub enum CmisError {
    /// An input tensor's shape does not match what the operation requires.
    Shape {
        context: String,
        expected: String,
        found: String,
    },
    /// A landmark sequence is shorter than the requested crop window.
    TooFewFrames {
        sample_id: String,
        required: usize,
        available: usize,
    },
    /// A neutral draw was requested for an individual with an empty pool.
    EmptyPool { individual_id: String },
    /// An operation that needs at least one element received none.
    EmptyInput { context: String },
    /// Two paired slices disagree in length.
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },
    /// A configuration value or combination is invalid.
    InvalidConfig { message: String },
}

impl fmt::Display for CmisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmisError::Shape {
                context,
                expected,
                found,
            } => write!(f, "{context}: expected shape {expected}, found {found}"),
            CmisError::TooFewFrames {
                sample_id,
                required,
                available,
            } => write!(
                f,
                "sample {sample_id}: needs {required} frames, has {available}"
            ),
            CmisError::EmptyPool { individual_id } => {
                write!(f, "individual {individual_id}: neutral pool is empty")
            }
            CmisError::EmptyInput { context } => write!(f, "{context}: empty input"),
            CmisError::LengthMismatch {
                context,
                left,
                right,
            } => write!(f, "{context}: length mismatch ({left} vs {right})"),
            CmisError::InvalidConfig { message } => write!(f, "invalid config: {message}"),
        }
    }
}

impl core::error::Error for CmisError {}

impl CmisError {
    /// Shorthand for a [`CmisError::Shape`] with formatted fields.
    pub fn shape(context: &str, expected: impl fmt::Display, found: impl fmt::Display) -> Self {
        use alloc::string::ToString;
        CmisError::Shape {
            context: context.to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Shorthand for a [`CmisError::InvalidConfig`].
    pub fn config(message: impl fmt::Display) -> Self {
        use alloc::string::ToString;
        CmisError::InvalidConfig {
            message: message.to_string(),
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, CmisError>;
