use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto exit codes:
/// `Io` -> 2, `Config`/`Format` -> 3, `Numeric` -> 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (WAV headers, parameter JSON schema).
    #[error("format error: {0}")]
    Format(String),

    /// Inconsistent arguments: length mismatches, bad flag values.
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure (NaN loss, divergence).
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
