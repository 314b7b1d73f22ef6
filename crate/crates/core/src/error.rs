use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid layer {index}: {reason}")]
    InvalidLayer { index: usize, reason: String },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("layer {index} is not a convolution")]
    NotConvolution { index: usize },
    #[error("split index {index} is invalid for a network with {layers} layers")]
    InvalidSplit { index: usize, layers: usize },
    #[error("variable index {index} out of range for {dim} coordinates")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("manifest shape inconsistency: {0}")]
    ManifestShape(String),
    #[error("parameter blob truncated: manifest needs {needed} floats, blob holds {available}")]
    TruncatedBlob { needed: usize, available: usize },
    #[error("bad IDX magic {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },
    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("malformed IDX file: {0}")]
    MalformedIdx(String),
    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },
    #[error("refusing to overwrite existing file {}", .0.display())]
    AlreadyExists(PathBuf),
    #[error("manifest parse error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, one per variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::NonFinite { .. } => "non-finite",
            Error::InvalidTensor(_) => "invalid-tensor",
            Error::InvalidLayer { .. } => "invalid-layer",
            Error::InvalidNetwork(_) => "invalid-network",
            Error::ClassOutOfRange { .. } => "class-out-of-range",
            Error::NotConvolution { .. } => "not-convolution",
            Error::InvalidSplit { .. } => "invalid-split",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Unsupported(_) => "unsupported",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::ManifestShape(_) => "manifest-shape",
            Error::TruncatedBlob { .. } => "truncated-blob",
            Error::BadMagic { .. } => "bad-magic",
            Error::CountMismatch { .. } => "count-mismatch",
            Error::MalformedIdx(_) => "malformed-idx",
            Error::Diverged { .. } => "diverged",
            Error::AlreadyExists(_) => "already-exists",
            Error::Manifest(_) => "manifest-parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
