use std::path::PathBuf;

/// Errors raised by the tracker library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is missing, malformed or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// Tensor or feature-map shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// An operation was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// A numeric result left the representable range.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A sequence dataset on disk is incomplete or inconsistent.
    #[error("dataset error: {0}")]
    Dataset(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },
    /// Checkpoint container could not be decoded.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's invocation rather than by the data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Usage(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
