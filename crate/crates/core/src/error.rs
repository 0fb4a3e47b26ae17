use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} file {path}: {reason}")]
    Format {
        path: PathBuf,
        format: &'static str,
        reason: String,
    },

    #[error("unsupported bit depth in {path}: {detail}")]
    UnsupportedBitDepth { path: PathBuf, detail: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("missing ground truth for {0}")]
    MissingGroundTruth(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("patch size {patch} exceeds image dimensions {width}x{height}")]
    ImageTooSmall {
        patch: usize,
        width: usize,
        height: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero vector passed to angular error")]
    ZeroVector,

    #[error("illuminant channel {channel} is {value:e}, below the division guard")]
    DivisionGuard { channel: usize, value: f64 },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("solver did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) => ErrorKind::Usage,
            Error::Io { .. }
            | Error::Format { .. }
            | Error::UnsupportedBitDepth { .. }
            | Error::MissingFile(_)
            | Error::MissingGroundTruth(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidData(_)
            | Error::ImageTooSmall { .. }
            | Error::Empty(_)
            | Error::Json { .. } => ErrorKind::Data,
            Error::ZeroVector
            | Error::DivisionGuard { .. }
            | Error::Degenerate(_)
            | Error::Diverged { .. }
            | Error::NonConvergence(_) => ErrorKind::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
