use std::fmt;

/// Errors from the command-line layer: metrics parsing, plotting and
/// experiment orchestration. Core errors pass through unchanged.
#[derive(Debug)]
pub enum Error {
    /// A caller-supplied argument is unusable (no files, zero bin width, ...).
    Input { reason: String },
    /// A metrics CSV is missing, malformed, or lacks the requested column.
    Metrics { path: String, reason: String },
    /// A figure cannot be drawn from the given series.
    Plot { reason: String },
    /// A destructive action was declined (existing output without --force).
    Refusal { reason: String },
    Io { path: String, source: std::io::Error },
    Core(mazerl_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Input { reason } => write!(f, "bad input: {reason}"),
            Error::Metrics { path, reason } => write!(f, "metrics file {path}: {reason}"),
            Error::Plot { reason } => write!(f, "cannot plot: {reason}"),
            Error::Refusal { reason } => write!(f, "{reason}"),
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
            Error::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<mazerl_core::Error> for Error {
    fn from(e: mazerl_core::Error) -> Self {
        Error::Core(e)
    }
}

impl Error {
    pub fn input(reason: impl Into<String>) -> Self {
        Error::Input { reason: reason.into() }
    }

    pub fn metrics(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Metrics { path: path.as_ref().display().to_string(), reason: reason.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
