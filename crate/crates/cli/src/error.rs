use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Core(#[from] taxcode_core::Error),
}

impl CliError {
    /// 1 for validation and usage problems, 2 for filesystem failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => 1,
            CliError::Read { .. } => 2,
            CliError::Core(e) => {
                if e.is_io() {
                    2
                } else {
                    1
                }
            }
        }
    }
}

/// Lifts any core error type into [`CliError`].
pub fn core<E: Into<taxcode_core::Error>>(e: E) -> CliError {
    CliError::Core(e.into())
}
