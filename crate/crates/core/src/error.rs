use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("cannot decode {path}: {reason}")]
    Undecodable { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("image {height}x{width} must have even dimensions")]
    OddDimensions { height: usize, width: usize },

    #[error("image {height}x{width} is smaller than the {window}x{window} window")]
    TooSmall {
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint holds a {found} network, expected {expected}")]
    SpecMismatch { expected: String, found: String },

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training failed in {phase} phase (outer iteration {outer_iter}, epoch {epoch}): {source}")]
    Training {
        phase: String,
        outer_iter: usize,
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("frozen parameters of {0} were modified")]
    FrozenViolation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// True when the failure is attributable to user input (bad files,
    /// arguments or configs) rather than an internal fault.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::NotFound(_)
            | Error::Undecodable { .. }
            | Error::DimensionMismatch { .. }
            | Error::OddDimensions { .. }
            | Error::TooSmall { .. }
            | Error::InvalidArgument(_)
            | Error::CorruptCheckpoint(_)
            | Error::SpecMismatch { .. }
            | Error::CorruptStream(_)
            | Error::Config(_) => true,
            Error::Training { source, .. } => source.is_input_error(),
            Error::Io { .. } | Error::NonFinite(_) | Error::FrozenViolation(_) => false,
        }
    }
}
