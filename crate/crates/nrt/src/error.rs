use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit codes. The numbering is part of the command-line contract.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const NUMERICAL: i32 = 4;
    pub const PROPERTY: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("{0}")]
    Property(String),
    #[error(transparent)]
    Core(#[from] nrt_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io { .. } | CliError::Format { .. } => exit::IO,
            CliError::Numerical(_) => exit::NUMERICAL,
            CliError::Property(_) => exit::PROPERTY,
            CliError::Core(nrt_core::Error::NonFinite { .. }) => exit::NUMERICAL,
            CliError::Core(_) => exit::USAGE,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        CliError::Format { path: path.to_path_buf(), msg: msg.into() }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io { path: PathBuf::new(), source: std::io::Error::other(e) }
    }
}

pub type CliResult<T> = Result<T, CliError>;
