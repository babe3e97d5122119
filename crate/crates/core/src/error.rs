use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported element type {0}")]
    UnsupportedElementType(String),

    #[error("unsupported dimensionality: NDims={0}")]
    UnsupportedDimensionality(usize),

    #[error("unsupported byte order: big-endian payloads are rejected")]
    UnsupportedByteOrder,

    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSizeMismatch { expected: usize, found: usize },

    #[error("expected {expected} channels, found {found}")]
    ChannelCount { expected: usize, found: usize },

    #[error("non-finite value at linear index {0}")]
    NonFinite(usize),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid label value {0}")]
    InvalidLabel(f64),

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),

    #[error("invalid window {window}: must be odd, >= {min} and <= smallest axis {max}")]
    InvalidWindow { window: usize, min: usize, max: usize },

    #[error("axis too short: every axis needs at least {min} voxels, dims are {dims:?}")]
    AxisTooShort { dims: [usize; 3], min: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient component")]
    NonFiniteGradient,

    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("undefined HD95: label {0} is empty in at least one map")]
    UndefinedHd95(u16),

    #[error("every voxel is folded; log-Jacobian statistics are undefined")]
    AllFolded,

    #[error("no common labels")]
    NoCommonLabels,

    #[error("could not generate a fold-free field within {0} attempts")]
    FoldFreeBudget(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
