use thiserror::Error;

/// Every failure the toolkit reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: axis {axis}: expected {expected}, got {got}")]
    Dimension { op: &'static str, axis: String, expected: String, got: String },
    #[error("config error at {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("format error at {pointer}: {reason}")]
    Format { pointer: String, reason: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, axis: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension { op, axis: axis.into(), expected: expected.to_string(), got: got.to_string() }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }

    /// Short machine-readable kind tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Config { .. } => "config",
            Error::Usage(_) => "usage",
            Error::Annotation(_) => "annotation",
            Error::Value(_) => "value",
            Error::Format { .. } => "format",
            Error::Integrity(_) => "integrity",
            Error::Training { .. } => "training",
            Error::Io { .. } => "io",
        }
    }
}
