use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tensor shape {shape:?} does not hold {len} elements")]
    BadTensor { shape: Vec<usize>, len: usize },

    #[error("backward called without a preceding train-mode forward pass (layer {layer})")]
    NoForwardCache { layer: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty candidate set: {0}")]
    EmptyCandidates(&'static str),

    #[error("class {class} has {available} images but {required} are required")]
    InsufficientClass {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("unknown backbone preset `{0}`")]
    UnknownPreset(String),

    #[error("{}: offset {offset}: {message}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Dataset { path: PathBuf, message: String },

    #[error("failed to decode image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("evaluation set is empty")]
    EmptyDataset,

    #[error("augmented datasets cannot be used for evaluation")]
    AugmentedEvaluation,

    #[error("report line {line}: {message}")]
    Report { line: usize, message: String },

    #[error("model container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::BadTensor { .. } => "bad_tensor",
            Error::NoForwardCache { .. } => "no_forward_cache",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptyCandidates(_) => "empty_candidates",
            Error::InsufficientClass { .. } => "insufficient_class",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::Format { .. } => "format",
            Error::Dataset { .. } => "dataset",
            Error::Image { .. } => "image",
            Error::EmptyDataset => "empty_dataset",
            Error::AugmentedEvaluation => "augmented_evaluation",
            Error::Report { .. } => "report",
            Error::Container(_) => "container",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
