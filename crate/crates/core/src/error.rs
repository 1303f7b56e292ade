use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("{op}: non-positive input to log")]
    NonPositiveLog { op: &'static str },

    #[error("{op}: zero-norm row {row}")]
    ZeroNorm { op: &'static str, row: usize },

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("missing or invalid attribute `{name}` for primitive `{primitive}`")]
    BadAttribute { primitive: String, name: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("variable {0} is not recorded on this tape")]
    NotOnTape(usize),

    #[error("label length {got} does not match vocabulary size {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("empty contrastive batch: no anchor has a positive")]
    EmptyContrastiveBatch,

    #[error("sequence length {len} is shorter than stride {stride}")]
    SequenceTooShort { len: usize, stride: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("unsupported format version {found} (reader supports {supported})")]
    Version { found: u32, supported: u32 },

    #[error("checksum mismatch: file is corrupted")]
    Checksum,

    #[error("malformed file: {0}")]
    Format(String),

    #[error("checkpoint incompatible: {0}")]
    Checkpoint(String),

    #[error("missing file: {0}")]
    MissingFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::NonPositiveLog { .. } => "non_positive_log",
            Error::ZeroNorm { .. } => "zero_norm",
            Error::UnknownPrimitive(_) => "unknown_primitive",
            Error::BadAttribute { .. } => "bad_attribute",
            Error::NotScalar(_) => "not_scalar",
            Error::NotOnTape(_) => "not_on_tape",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::EmptyContrastiveBatch => "empty_contrastive_batch",
            Error::SequenceTooShort { .. } => "sequence_too_short",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidVocabulary(_) => "invalid_vocabulary",
            Error::Version { .. } => "version_mismatch",
            Error::Checksum => "checksum",
            Error::Format(_) => "format",
            Error::Checkpoint(_) => "checkpoint_incompatible",
            Error::MissingFile(_) => "missing_file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
