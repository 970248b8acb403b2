use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while decoding the binary container format.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes: expected \"MACD\"")]
    BadMagic,
    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("file kind {found} does not match the expected kind {expected}")]
    Kind { found: u16, expected: u16 },
    #[error("file is truncated")]
    Truncated,
    #[error("checksum mismatch in block `{block}`")]
    Checksum { block: String },
    #[error("malformed content: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch in `{op}`: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("topology is disconnected; unreachable pairs: {0:?}")]
    Disconnected(Vec<(usize, usize)>),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("missing artifact: {}", .0.display())]
    Missing(std::path::PathBuf),
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
