use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while reading or validating a dataset bundle.
#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{file}: missing required file")]
    Missing { file: PathBuf },
    #[error("{file}:{line}: {msg}")]
    Parse { file: PathBuf, line: usize, msg: String },
    #[error("{file}:{line}: inconsistent counts: {msg}")]
    Inconsistent { file: PathBuf, line: usize, msg: String },
    #[error("{file}:{line}: adjacency is not square: {msg}")]
    NonSquare { file: PathBuf, line: usize, msg: String },
    #[error("{file}:{line}: label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { file: PathBuf, line: usize, label: i64, n_classes: usize },
    #[error("{file}:{line}: self-loop on node {node}")]
    SelfLoop { file: PathBuf, line: usize, node: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("config error at {pointer}: {msg}")]
    Config { pointer: String, msg: String },
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("augmentation error: {0}")]
    Augment(String),
    #[error("method error: {0}")]
    Method(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(pointer: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { pointer: pointer.into(), msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line front end:
    /// 1 for configuration problems, 2 for data problems, 3 for runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::Bundle(_) | Error::Graph(_) | Error::Io { .. } | Error::Format { .. } => 2,
            _ => 3,
        }
    }
}
