use std::fmt;

/// Error type shared by the autodiff engine, environments and trainer.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A non-finite value (NaN or infinity) surfaced during a computation.
    NonFinite { context: String },
    /// A maze file failed validation.
    InvalidMaze { reason: String },
    /// A configuration value is out of range or inconsistent.
    InvalidConfig { reason: String },
    /// A checkpoint file is malformed or inconsistent with its manifest.
    InvalidCheckpoint { reason: String },
    /// An API contract was violated (missing parameter, wrong variant, ...).
    Contract { reason: String },
    /// Underlying I/O failure, wrapped with the path that was touched.
    Io { path: String, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, expected, got } => {
                write!(f, "shape mismatch in {op}: expected {expected:?}, got {got:?}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::InvalidMaze { reason } => write!(f, "invalid maze: {reason}"),
            Error::InvalidConfig { reason } => write!(f, "invalid config: {reason}"),
            Error::InvalidCheckpoint { reason } => write!(f, "invalid checkpoint: {reason}"),
            Error::Contract { reason } => write!(f, "contract violation: {reason}"),
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn contract(reason: impl Into<String>) -> Self {
        Error::Contract { reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
