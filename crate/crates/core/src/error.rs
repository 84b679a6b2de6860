use std::fmt;

/// Broad failure class, used by front ends to pick exit codes and the
/// `error:<category>:` prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// Bad arguments or inconsistent shapes.
    Validation,
    /// Input data violates a precondition (too few samples, non-finite values, ...).
    Data,
    /// A file does not follow its declared layout.
    Format,
    /// An iterative routine did not converge.
    Numerical,
    /// Reading or writing a file failed.
    Io,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Validation => "validation",
            Category::Data => "data",
            Category::Format => "format",
            Category::Numerical => "numerical",
            Category::Io => "io",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {diff:e}")]
    Asymmetric { row: usize, col: usize, diff: f64 },

    #[error("jacobi did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("subspace endpoint {endpoint} outside [1, {dim}]")]
    OutOfBounds { endpoint: i64, dim: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("duplicate utterance id '{0}'")]
    DuplicateId(String),

    #[error("unknown speaker '{0}'")]
    UnknownSpeaker(String),

    #[error("trial line {line}: {message}")]
    Trial { line: usize, message: String },

    #[error("{0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::InsufficientData { .. }
            | Error::NonFinite(_)
            | Error::DuplicateId(_)
            | Error::UnknownSpeaker(_)
            | Error::Trial { .. }
            | Error::Degenerate(_) => Category::Data,
            Error::DimensionMismatch { .. }
            | Error::Shape(_)
            | Error::Asymmetric { .. }
            | Error::OutOfBounds { .. }
            | Error::Invalid(_) => Category::Validation,
            Error::NoConvergence { .. } => Category::Numerical,
            Error::Format(_) => Category::Format,
            Error::Io { .. } => Category::Io,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
