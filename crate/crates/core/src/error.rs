use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid {field}: {msg}")]
    Validation { field: String, msg: String },

    #[error("shape mismatch: expected {expected} elements, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("degenerate initialization: initial norm is zero, norm ratio undefined")]
    DegenerateInit,

    #[error("schedule exhausted: step {t} is past the horizon {horizon}")]
    ScheduleExhausted { t: u64, horizon: u64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// numeric failures during a run, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation { .. } => 2,
            Error::AtStep { source, .. } => source.exit_code(),
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Checkpoint(_) => 1,
            Error::ShapeMismatch { .. }
            | Error::DegenerateInit
            | Error::ScheduleExhausted { .. }
            | Error::EmptyBatch
            | Error::NonFinite { .. } => 3,
        }
    }
}
