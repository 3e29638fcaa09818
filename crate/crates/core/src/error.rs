use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Which part of the OHNN training objective produced a bad value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossComponent {
    Aam,
    Distance,
}

impl std::fmt::Display for LossComponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossComponent::Aam => f.write_str("aam"),
            LossComponent::Distance => f.write_str("distance"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector")]
    ZeroVector,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown speaker `{0}`")]
    UnknownSpeaker(String),

    #[error("unknown utterance `{0}`")]
    UnknownUtterance(String),

    #[error("duplicate utterance id `{0}`")]
    DuplicateUtterance(String),

    #[error("degenerate reflection (norm {norm:e})")]
    DegenerateReflection { norm: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("non-finite {component} loss")]
    NonFiniteLoss { component: LossComponent },

    #[error("training diverged at epoch {epoch}: non-finite {component} loss")]
    Diverged {
        epoch: usize,
        component: LossComponent,
    },

    #[error("speaker `{speaker}` has {available} usable utterances, {required} required")]
    NotEnoughUtterances {
        speaker: String,
        available: usize,
        required: usize,
    },

    #[error("no different-speaker partners")]
    NoNontargetPartners,

    #[error("at least {required} speakers required, got {actual}")]
    TooFewSpeakers { required: usize, actual: usize },

    #[error("score set has no {0} trials")]
    EmptyClass(&'static str),

    #[error("at least 2 groups required, got {0}")]
    TooFewGroups(usize),

    #[error("{source_name}: {message} at byte offset {offset}")]
    Binary {
        source_name: String,
        offset: u64,
        message: String,
    },

    #[error("{source_name}: line {line}: {message}")]
    Text {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn binary(source_name: &str, offset: u64, message: impl Into<String>) -> Self {
        Error::Binary {
            source_name: source_name.to_string(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn text(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Text {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}
