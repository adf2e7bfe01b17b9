use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Machine-readable error class, surfaced by the CLI and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCategory {
    Parse,
    Validation,
    NearCollision,
    BlowUp,
    Io,
    InvalidArgument,
    Numerical,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Parse => "parse",
            ErrorCategory::Validation => "validation",
            ErrorCategory::NearCollision => "near-collision",
            ErrorCategory::BlowUp => "blow-up",
            ErrorCategory::Io => "io",
            ErrorCategory::InvalidArgument => "invalid-argument",
            ErrorCategory::Numerical => "numerical",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported algebra `{0}`")]
    UnsupportedAlgebra(String),

    #[error("invalid Lie algebra: {0}")]
    InvalidAlgebra(String),

    #[error("singular kernel: the 3D Green's function is unbounded at coincident points")]
    SingularKernel,

    #[error("near collision: {0}")]
    NearCollision(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("blow-up: non-finite state at step {step}")]
    BlowUp { step: usize },

    #[error("insufficient history: need at least {needed} time slices, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("reconstruction refused: zero-curvature residual {residual:e} exceeds {tolerance:e}")]
    ReconstructionRefused { residual: f64, tolerance: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::InvalidGrid(_)
            | Error::UnsupportedAlgebra(_)
            | Error::InvalidAlgebra(_)
            | Error::InsufficientHistory { .. } => ErrorCategory::InvalidArgument,
            Error::SingularKernel | Error::SingularMatrix(_) | Error::ReconstructionRefused { .. } => {
                ErrorCategory::Numerical
            }
            Error::NearCollision(_) => ErrorCategory::NearCollision,
            Error::BlowUp { .. } => ErrorCategory::BlowUp,
            Error::Parse { .. } => ErrorCategory::Parse,
            Error::UnknownScenario(_) | Error::Validation { .. } => ErrorCategory::Validation,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Context { source, .. } => source.category(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
