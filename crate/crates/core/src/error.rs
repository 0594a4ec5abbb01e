use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid architecture: {0}")]
    Arch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("label value {value} is not binary")]
    NonBinaryLabel { value: f32 },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("unknown conv layer ordinal {ordinal} (model has {n_conv})")]
    UnknownLayer { ordinal: usize, n_conv: usize },

    #[error("AUROC undefined: {0}")]
    AurocUndefined(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("size mismatch in {}: expected {expected} bytes, found {actual}", .path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("label domain violation in {}: value {value} at sample {sample}", .path.display())]
    LabelDomain {
        path: PathBuf,
        sample: usize,
        value: u8,
    },

    #[error("bad dataset metadata: {0}")]
    Meta(String),

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),

    #[error("overlapping tensor ranges at `{0}`")]
    OffsetOverlap(String),

    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),

    #[error("truncated checkpoint: expected {expected} payload bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
