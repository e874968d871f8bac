use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}:{line}: expected `key = value`, got {text:?}", file.display())]
    Syntax {
        file: PathBuf,
        line: usize,
        text: String,
    },

    #[error("{}:{line}: unknown field `{key}`", file.display())]
    UnknownField {
        file: PathBuf,
        line: usize,
        key: String,
    },

    #[error("{}:{line}: field `{key}` given twice", file.display())]
    DuplicateField {
        file: PathBuf,
        line: usize,
        key: String,
    },

    #[error("missing required field `{0}`")]
    MissingField(&'static str),

    #[error("invalid value {value:?} for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },

    #[error("{}:{line}: {message}", file.display())]
    ParamFormat {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] taskrel_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
