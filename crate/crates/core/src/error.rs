use thiserror::Error;

/// Errors produced anywhere in the engine or the evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("{0} out of range")]
    OutOfRange(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("malformed {kind} data: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape { op, lhs, rhs }
    }

    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            msg: msg.into(),
        }
    }

    /// Attach a sample id to an error raised while processing that sample.
    pub fn in_sample(self, id: &str) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            e => Error::Sample {
                id: id.to_string(),
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
