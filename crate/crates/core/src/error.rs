use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("missing stage input `{artifact}`; run `{producer}` first")]
    MissingStageInput {
        artifact: String,
        producer: &'static str,
    },
    #[error("artifact {path} was produced with config hash {found}, current config hash is {expected} (use --force to override)")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("output directory {0} is locked by another run (remove the .lock file or pass --force)")]
    Locked(PathBuf),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension { .. }
            | Error::InvalidInput(_)
            | Error::NonFinite(_)
            | Error::InsufficientData(_)
            | Error::Parse { .. }
            | Error::DuplicateId(_)
            | Error::UnknownLabel(_)
            | Error::Format { .. }
            | Error::Io { .. }
            | Error::MissingStageInput { .. }
            | Error::HashMismatch { .. }
            | Error::Locked(_) => ErrorKind::Data,
            Error::NotPsd(_) | Error::Singular(_) | Error::Numerical(_) | Error::Diverged { .. } => {
                ErrorKind::Numerical
            }
            Error::Config { .. } => ErrorKind::Config,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
