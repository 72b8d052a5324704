//! Process-level error type: every failure is classified into one of the
//! documented exit codes and rendered as a single machine-parsable line.

use cmis_core::error::CmisError;

/// A failure with its exit classification.
///
/// * `usage` (exit 2): the command line itself is malformed.
/// * `config` (exit 3): a config or checkpoint is unreadable, invalid, or
///   inconsistent with the run it is applied to.
/// * `runtime` (exit 1): everything that goes wrong after inputs were
///   accepted.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("error[usage]: {0}")]
    Usage(String),
    #[error("error[config]: {0}")]
    Config(String),
    #[error("error[runtime]: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// Wraps a core error that surfaced while loading or validating inputs.
    pub fn config_from(err: impl std::fmt::Display) -> Self {
        CliError::Config(one_line(err))
    }

    /// Wraps a core error that surfaced mid-run.
    pub fn runtime_from(err: impl std::fmt::Display) -> Self {
        CliError::Runtime(one_line(err))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

impl From<CmisError> for CliError {
    fn from(err: CmisError) -> Self {
        CliError::runtime_from(err)
    }
}

/// Collapses a multi-line message into one line so stderr stays parsable.
fn one_line(err: impl std::fmt::Display) -> String {
    err.to_string().replace('\n', " ")
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches a file path to an IO error.
pub fn io_context(path: &std::path::Path, err: std::io::Error) -> String {
    format!("{}: {}", path.display(), err)
}
