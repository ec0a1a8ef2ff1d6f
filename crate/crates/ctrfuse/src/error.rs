use std::path::PathBuf;

use ctrfuse_core::Error as CoreError;

/// Failures surfaced by the file formats and commands, grouped by the exit
/// code they map to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Input(String),
    #[error("{path}: schema error at `{at}`: {message}")]
    Schema {
        path: String,
        at: String,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn schema(
        path: impl Into<String>,
        at: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        CliError::Schema {
            path: path.into(),
            at: at.into(),
            message: message.into(),
        }
    }

    /// 1 input error, 2 divergence, 3 schema error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::Divergence { .. }) => 2,
            CliError::Schema { .. }
            | CliError::Core(CoreError::LevelConstraint { .. })
            | CliError::Core(CoreError::Architecture(_)) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
