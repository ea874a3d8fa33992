use std::path::PathBuf;
use std::process::ExitCode;

use problm::io::FormatError;
use problm::{EvalError, SolveError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Eval(_) => 3,
            CliError::Io { .. } | CliError::Format { .. } => 4,
        })
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn format(path: impl Into<PathBuf>) -> impl FnOnce(FormatError) -> CliError {
        let path = path.into();
        move |err| match err {
            FormatError::Io(source) => CliError::Io { path, source },
            other => CliError::Format {
                path,
                message: other.to_string(),
            },
        }
    }
}

impl From<SolveError> for CliError {
    fn from(err: SolveError) -> Self {
        match err {
            SolveError::Config(msg) => CliError::Usage(msg),
            other => CliError::Eval(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(err: EvalError) -> Self {
        CliError::Eval(err.to_string())
    }
}
