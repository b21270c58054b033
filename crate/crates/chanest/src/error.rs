use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("format error in {path}: {message} (at byte offset {offset})")]
    Format { path: PathBuf, offset: u64, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: chanest_core::Error,
    },
}

pub type AppResult<T> = Result<T, AppError>;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const FORMAT: u8 = 3;
    pub const NUMERICAL: u8 = 4;
}

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn core(context: impl Into<String>, source: chanest_core::Error) -> Self {
        Self::Core { context: context.into(), source }
    }

    pub fn format(path: impl AsRef<Path>, offset: u64, message: impl Into<String>) -> Self {
        Self::Format { path: path.as_ref().to_path_buf(), offset, message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => exit::CONFIG,
            Self::Format { .. } => exit::FORMAT,
            Self::Io { .. } => exit::IO,
            Self::Core { .. } => exit::NUMERICAL,
        }
    }
}
