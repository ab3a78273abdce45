use std::path::{Path, PathBuf};

use erae_core::Error as CoreError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Io { .. } | Self::Input(_) => EXIT_IO,
            Self::Core(e) => match e {
                CoreError::Diverged(_) => EXIT_NUMERIC,
                CoreError::Io(_)
                | CoreError::Parse { .. }
                | CoreError::RaggedEmbeddings { .. }
                | CoreError::Checkpoint(_)
                | CoreError::EmptyCorpus => EXIT_IO,
                _ => EXIT_CONFIG,
            },
        }
    }
}
