use std::path::Path;

use thiserror::Error;

/// Failures surfaced by the command-line tool, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numeric(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Data(format!("{}: {e}", path.display()))
    }
}

impl From<dynmri_core::Error> for CliError {
    fn from(e: dynmri_core::Error) -> Self {
        use dynmri_core::Error as E;
        match e {
            E::InvalidArgument(_) => Self::Config(e.to_string()),
            E::ShapeMismatch(_) | E::Corrupt(_) | E::Io(_) => Self::Data(e.to_string()),
            E::NonFinite(_) | E::Degenerate(_) => Self::Numeric(e.to_string()),
        }
    }
}
