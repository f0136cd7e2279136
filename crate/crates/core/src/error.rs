use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("contour is empty")]
    EmptyContour,
    #[error("non-finite loss at iteration {iteration} (phase {phase}): {detail}")]
    Diverged {
        iteration: usize,
        phase: u8,
        detail: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(
        what: &str,
        expected: (usize, usize),
        found: (usize, usize),
    ) -> Self {
        Error::Dimensions(format!(
            "{what}: expected {}x{} (w x h), found {}x{}",
            expected.0, expected.1, found.0, found.1
        ))
    }

    /// Prefixes a format error with the file it came from.
    pub(crate) fn in_file(self, path: &std::path::Path) -> Self {
        match self {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        }
    }
}
