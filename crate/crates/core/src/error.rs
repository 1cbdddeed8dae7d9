use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller supplied an argument that violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Malformed file contents. `offset` is the byte position where parsing failed.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A scene description that cannot be rendered.
    #[error("invalid scene: {0}")]
    Spec(String),

    /// NaN/Inf or integer overflow in a numeric kernel.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    /// Training produced a non-finite loss; carries the epoch that failed.
    #[error("training diverged at epoch {epoch} (last good checkpoint: {last_good:?})")]
    Diverged {
        epoch: usize,
        last_good: Option<PathBuf>,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input rather than runtime failures.
    pub fn is_argument(&self) -> bool {
        matches!(self, Error::Argument(_) | Error::Spec(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
