use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Extents do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An argument or configuration value is out of its legal range.
    #[error("configuration error: {0}")]
    Config(String),
    /// A NaN or infinity appeared where finite values are required.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// A scalar argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed input data (labels, masks, checkpoint payloads).
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
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

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
pub(crate) use dim_err;
