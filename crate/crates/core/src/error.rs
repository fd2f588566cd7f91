use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed model container: {0}")]
    MalformedContainer(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{0}` contains a non-finite value")]
    NonFiniteTensor(String),

    #[error("tensor `{0}` is missing from the container")]
    MissingTensor(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("model configurations differ: {0}")]
    ConfigMismatch(String),

    #[error("token id {id} is out of range for a vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("sequence of length {len} exceeds max_positions = {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty input sequence: {0}")]
    EmptySequence(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("layer-norm standard deviation is zero at sub-layer {sublayer}, position {position}")]
    DegenerateStd { sublayer: usize, position: usize },

    #[error("trace is incomplete: {0}")]
    IncompleteTrace(String),

    #[error("vector widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),

    #[error("sub-layer {0} is not a feed-forward sub-layer")]
    WrongSublayerKind(usize),

    #[error("activation derivative undefined at sub-layer {sublayer}, position {position}, unit {unit}")]
    UndefinedDerivative {
        sublayer: usize,
        position: usize,
        unit: usize,
    },

    #[error("zero-norm reference embedding{}", location_suffix(.sentence_id, .position))]
    ZeroNorm {
        sentence_id: Option<String>,
        position: Option<usize>,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("series is empty")]
    EmptySeries,

    #[error("permutation group is empty")]
    EmptyGroup,

    #[error("{assignments} assignments exceed the enumeration cap of {cap}")]
    TooManyAssignments { assignments: u128, cap: u64 },

    #[error("checkpoints are misaligned: {0}")]
    MisalignedCheckpoints(String),

    #[error("need at least {needed} sentences, found {available}")]
    InsufficientSentences { needed: usize, available: usize },

    #[error("need at least {needed} checkpoint pairs, found {available}")]
    InsufficientPairs { needed: usize, available: usize },

    #[error("malformed row {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("duplicate key ({checkpoint}, {sentence_id})")]
    DuplicateKey { checkpoint: u32, sentence_id: String },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("no hypothesis reached end-of-sequence within {max_len} tokens")]
    EmptyHypothesis { max_len: usize },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn location_suffix(sentence_id: &Option<String>, position: &Option<usize>) -> String {
    match (sentence_id, position) {
        (Some(id), Some(p)) => format!(" (sentence {id}, position {p})"),
        (Some(id), None) => format!(" (sentence {id})"),
        (None, Some(p)) => format!(" (position {p})"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable variant name, used for structured diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedContainer(_) => "MalformedContainer",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFiniteTensor(_) => "NonFiniteTensor",
            Error::MissingTensor(_) => "MissingTensor",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::TokenOutOfRange { .. } => "TokenOutOfRange",
            Error::SequenceTooLong { .. } => "SequenceTooLong",
            Error::EmptySequence(_) => "EmptySequence",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::DegenerateStd { .. } => "DegenerateStd",
            Error::IncompleteTrace(_) => "IncompleteTrace",
            Error::WidthMismatch(..) => "WidthMismatch",
            Error::WrongSublayerKind(_) => "WrongSublayerKind",
            Error::UndefinedDerivative { .. } => "UndefinedDerivative",
            Error::ZeroNorm { .. } => "ZeroNorm",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::DegenerateSeries(_) => "DegenerateSeries",
            Error::EmptySeries => "EmptySeries",
            Error::EmptyGroup => "EmptyGroup",
            Error::TooManyAssignments { .. } => "TooManyAssignments",
            Error::MisalignedCheckpoints(_) => "MisalignedCheckpoints",
            Error::InsufficientSentences { .. } => "InsufficientSentences",
            Error::InsufficientPairs { .. } => "InsufficientPairs",
            Error::MalformedRow { .. } => "MalformedRow",
            Error::DuplicateKey { .. } => "DuplicateKey",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::EmptyInput(_) => "EmptyInput",
            Error::EmptyHypothesis { .. } => "EmptyHypothesis",
            Error::InvalidCorpus(_) => "InvalidCorpus",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
        }
    }

    /// True for failures of the numerics themselves rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateStd { .. }
                | Error::UndefinedDerivative { .. }
                | Error::ZeroNorm { .. }
                | Error::DegenerateSeries(_)
        )
    }
}
