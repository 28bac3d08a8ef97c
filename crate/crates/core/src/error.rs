use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HlqError>;

#[derive(Debug, Error)]
pub enum HlqError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("tuning error: {0}")]
    Tuning(String),
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("unsupported container version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HlqError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
