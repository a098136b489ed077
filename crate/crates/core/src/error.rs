use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can surface.
///
/// The variants group into the four families the CLI maps to exit codes:
/// usage/config, data/format, numeric/convergence, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at index {index}: {context}")]
    NonFinite { index: usize, context: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("power iteration did not converge after {iters} iterations (last residual {residual:e})")]
    Convergence { iters: usize, residual: f64 },

    #[error("ill-defined top singular vector: spectral gap {gap:e} below tie tolerance")]
    SpectralTie { gap: f64 },

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("training diverged at step {step} (batch {batch}): {detail}")]
    Diverged { step: usize, batch: usize, detail: String },

    #[error("{path}: malformed file at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Shape(_) | Error::State(_) => {
                ErrorKind::Usage
            }
            Error::Data(_) | Error::Format { .. } | Error::Io { .. } => ErrorKind::Data,
            Error::NonFinite { .. }
            | Error::Degenerate(_)
            | Error::Convergence { .. }
            | Error::SpectralTie { .. }
            | Error::Diverged { .. } => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}
