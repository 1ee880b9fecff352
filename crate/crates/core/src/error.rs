use std::path::PathBuf;

/// Errors raised anywhere in the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown task id {0}")]
    UnknownTask(u32),

    #[error("duplicate task id {0}: task ids must be strictly increasing")]
    DuplicateTask(u32),

    #[error("architecture hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("model file: {0}")]
    Format(String),

    #[error("payload checksum mismatch: header says {expected:08x}, payload is {found:08x}")]
    Checksum { expected: u32, found: u32 },

    #[error("idx file: {0}")]
    Idx(String),

    #[error("idx files disagree: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("label {label} is not in the task's class list {classes:?}")]
    LabelOutsideTask { label: u32, classes: Vec<u32> },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
