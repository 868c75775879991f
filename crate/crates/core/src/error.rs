use thiserror::Error;

/// A single offending field reported by config validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("{what}: expected length {expected}, got {actual}")]
    Alignment {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("backward requested before any forward pass")]
    NoForwardPass,

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("invalid config: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<FieldIssue>),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("every client excluded from aggregation")]
    EmptyAggregation,

    #[error("voting block incomplete: {filled} of {xi} rounds recorded")]
    IncompleteBlock { filled: usize, xi: usize },

    #[error("round {round}: {source}")]
    Round { round: usize, source: Box<Error> },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            other => Error::Round {
                round,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
