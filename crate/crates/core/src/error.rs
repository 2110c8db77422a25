use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported camera model `{0}`")]
    UnsupportedModel(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("no seed mask: {0}")]
    NoSeed(String),

    #[error("insufficient overlap: {0}")]
    InsufficientOverlap(String),

    #[error("degenerate fragment: {0}")]
    DegenerateFragment(String),

    #[error("registration failed: {0}")]
    RegistrationFailed(String),

    #[error("fragment {fragment} (frames {start}..{end}): {source}")]
    Fragment {
        fragment: usize,
        start: usize,
        end: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fragment pair ({0}, {1}) could not be registered: {2}")]
    PairFailed(usize, usize, String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
