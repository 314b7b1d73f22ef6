use std::path::PathBuf;

use eva_core::Error;

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot load {}: {source}", path.display())]
    Load {
        path: PathBuf,
        #[source]
        source: Error,
    },
    #[error("model/data error: {0}")]
    Data(String),
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Load { .. } | CliError::Data(_) | CliError::Write { .. } => 3,
        }
    }

    pub fn load(path: impl Into<PathBuf>) -> impl FnOnce(Error) -> Self {
        let path = path.into();
        move |source| CliError::Load { path, source }
    }

    pub fn write(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Write { path, source }
    }
}

impl From<Error> for CliError {
    /// Errors raised while running a computation. Arguments the user can fix
    /// are configuration errors; anything about the model or the data is not.
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_)
            | Error::ClassOutOfRange { .. }
            | Error::InvalidSplit { .. }
            | Error::NotConvolution { .. }
            | Error::IndexOutOfRange { .. }
            | Error::Unsupported(_)
            | Error::AlreadyExists(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
