use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke an API precondition (non-scalar backward, missing grad, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Bad user-supplied data.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint load failed: {0}")]
    Load(String),

    #[error("dtype mismatch: expected {expected}, found {found} for `{name}`")]
    Dtype {
        name: String,
        expected: &'static str,
        found: &'static str,
    },

    #[error("encoder transfer failed, mismatched tensors: {}", .0.join(", "))]
    Transfer(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    /// Short stable tag used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Input(_) => "input",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Load(_) => "load",
            Error::Dtype { .. } => "dtype",
            Error::Transfer(_) => "transfer",
            Error::Io { .. } => "io",
            Error::Wav(_) => "wav",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
