use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("channel mismatch in {op}: expected {expected} input channels, got {actual}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("{op} would produce an empty spatial output")]
    EmptyOutput { op: &'static str },

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Shape },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalar(Shape),

    #[error("loss does not depend on any tensor that requires a gradient")]
    NoGraph,

    #[error("computation graph was already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("mask must contain only 0 and 1, found {0}")]
    InvalidMask(f32),

    #[error("non-finite loss term `{term}` at iteration {iteration}")]
    NonFiniteLoss { term: &'static str, iteration: u64 },

    #[error("{path}: line {line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
