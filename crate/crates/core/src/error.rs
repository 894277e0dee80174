//! Error type shared by every module, with the CLI exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GraceError>;

#[derive(Debug, Error)]
pub enum GraceError {
    /// Malformed or inconsistent input data. `location` names the file/line or
    /// the offending index when known.
    #[error("input error{}: {message}", fmt_location(.location))]
    Input {
        location: Option<String>,
        message: String,
    },

    /// A configuration value violates a module precondition.
    #[error("config error: {0}")]
    Config(String),

    /// A mathematical precondition does not hold (empty graph, zero row sum, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite values produced during a numeric computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_location(loc: &Option<String>) -> String {
    match loc {
        Some(l) => format!(" at {l}"),
        None => String::new(),
    }
}

impl GraceError {
    pub fn input(message: impl Into<String>) -> Self {
        GraceError::Input {
            location: None,
            message: message.into(),
        }
    }

    pub fn input_at(location: impl Into<String>, message: impl Into<String>) -> Self {
        GraceError::Input {
            location: Some(location.into()),
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        GraceError::Config(message.into())
    }

    pub fn domain(message: impl Into<String>) -> Self {
        GraceError::Domain(message.into())
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        GraceError::Numeric(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GraceError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 input, 3 config, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            GraceError::Input { .. } | GraceError::Domain(_) | GraceError::Io { .. } => 2,
            GraceError::Config(_) => 3,
            GraceError::Numeric(_) => 4,
        }
    }
}
