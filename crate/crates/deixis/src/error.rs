//! Error taxonomy shared by the file formats, runner and CLI, with the
//! process exit-code mapping: 1 for I/O and malformed data, 2 for
//! configuration problems, 3 for weight-store failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}{location}: {message}")]
    Parse {
        path: String,
        /// Formatted " (line N, column M)" when known.
        location: String,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("weight store error: {0}")]
    Store(String),
}

impl AppError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> AppError {
        AppError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &std::path::Path, message: impl Into<String>) -> AppError {
        AppError::Parse {
            path: path.display().to_string(),
            location: String::new(),
            message: message.into(),
        }
    }

    pub fn parse_json(path: &std::path::Path, err: &serde_json::Error) -> AppError {
        AppError::Parse {
            path: path.display().to_string(),
            location: format!(" (line {}, column {})", err.line(), err.column()),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Io { .. } | AppError::Parse { .. } => 1,
            AppError::Config(_) => 2,
            AppError::Store(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
