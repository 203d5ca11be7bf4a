use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command line for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Runtime,
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Runtime => "runtime",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at record {record}: {detail}")]
    Parse { record: usize, detail: String },
    #[error("scenario `{id}`: {field}: {detail}")]
    Invariant {
        id: String,
        field: String,
        detail: String,
    },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("non-finite loss {value} at sample {sample}")]
    NonFiniteLoss { sample: usize, value: f64 },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("replay buffer holds {have} transitions but {want} were requested")]
    Underfilled { have: usize, want: usize },
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("key mismatch: {0}")]
    KeyMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("generation budget exhausted: {0}")]
    GenerationBudget(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::UnknownStrategy(_) => ErrorCategory::Config,
            Error::Parse { .. }
            | Error::Invariant { .. }
            | Error::DimensionOverflow(_)
            | Error::Version { .. }
            | Error::Corrupt(_)
            | Error::Empty(_)
            | Error::KeyMismatch(_)
            | Error::MissingInput(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorCategory::Data,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => ErrorCategory::Data,
            Error::Shape(_)
            | Error::NonFiniteLoss { .. }
            | Error::StepAfterDone
            | Error::Underfilled { .. }
            | Error::GenerationBudget(_)
            | Error::Io(_) => ErrorCategory::Runtime,
        }
    }

    pub(crate) fn invariant(id: &str, field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invariant {
            id: id.to_string(),
            field: field.into(),
            detail: detail.into(),
        }
    }
}
