use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal shorter than frame: {len} samples < frame length {frame_len}")]
    SignalTooShort { len: usize, frame_len: usize },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("frame too short: need at least 2 samples, got {0}")]
    FrameTooShort(usize),

    #[error("constant frame: autocorrelation is undefined for zero variance")]
    DegenerateFrame,

    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss requires at least one masked frame")]
    NoMaskedFrames,

    #[error("mask type learnable_token requires a token vector")]
    MissingMaskToken,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {0} has zero training examples")]
    ZeroCountClass(usize),

    #[error("confusion matrix is empty")]
    EmptyConfusionMatrix,

    #[error("need at least {k} distinct groups for {k}-fold cross-validation, found {found}")]
    TooFewGroups { k: usize, found: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sequence {id}: {source}")]
    Sequence {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn in_sequence(self, id: impl Into<String>) -> Self {
        Error::Sequence {
            id: id.into(),
            source: Box::new(self),
        }
    }
}
