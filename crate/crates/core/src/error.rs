use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("idx: bad magic 0x{found:08x}, expected 0x{expected:08x}{hint}")]
    BadMagic {
        expected: u32,
        found: u32,
        hint: &'static str,
    },

    #[error("idx: truncated payload, expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("idx: {found} bytes after the header, expected exactly {expected}")]
    TrailingBytes { expected: usize, found: usize },

    #[error("idx: image dimensions {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    DimMismatch {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },

    #[error("idx: label {label} at index {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, label: u8 },

    #[error("dataset: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("metrics: {0}")]
    Metric(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} ({variant})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        variant: String,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
