use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported element pair (P{velocity}, P{pressure})")]
    UnsupportedElement { velocity: usize, pressure: usize },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("step {step} failed (seed {seed}): {detail}; relative residual {residual:.3e}")]
    Step {
        step: usize,
        seed: u64,
        residual: f64,
        detail: String,
    },

    #[error("eigensolve failed: {0}")]
    Eigen(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that originate in the numerics rather than in user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Solver(_) | Error::Step { .. } | Error::Eigen(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
