use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Softmax with SGD has no transferable prescription.
    #[error(
        "softmax with SGD has no scale-transfer prescription (row amplification makes the \
         softmax localize and training unstable); pass the override flag to run the \
         experimental recipe s1=1/sqrt(N), s2=sqrt(K), eta_W=eta0*K"
    )]
    SoftmaxSgdRefused,

    #[error("{path}: {message} (at byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
