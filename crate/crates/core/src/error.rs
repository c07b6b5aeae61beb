use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The error-indicator labels contain a single class, so there is nothing to learn.
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("line {line}: {message}")]
    Ingestion { line: usize, message: String },

    #[error("record `{id}` would be deferred but has no expert prediction")]
    MissingExpert { id: String },

    #[error("feature schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("expert unavailable: {0}")]
    ExpertUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
