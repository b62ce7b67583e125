use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability vector: {0}")]
    InvalidProbVector(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("loss value {value} outside bounds [{lower}, {upper}]")]
    LossBound { value: f64, lower: f64, upper: f64 },

    #[error("unusable budget: epsilon {epsilon} must lie strictly inside ({lower}, {upper})")]
    Budget {
        epsilon: f64,
        lower: f64,
        upper: f64,
    },

    #[error("unusable budget: delta {0} must lie strictly inside (0, 1)")]
    Delta(f64),

    #[error("invalid tolerance: {0} must lie strictly inside (0, 1)")]
    Tolerance(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
