use std::path::Path;

use lockloop_core::Error as CoreError;
use thiserror::Error;

/// Exit-code contract: 0 ok, 2 configuration or usage, 3 loop instability,
/// 4 analysis failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    /// Analysis finished with flagged results; outputs were kept.
    #[error("{0}")]
    Analysis(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Analysis(_) => 4,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Argument(_) | CoreError::LoopSeparation(_) => 2,
                CoreError::Unstable { .. } => 3,
                _ => 4,
            },
        }
    }
}
