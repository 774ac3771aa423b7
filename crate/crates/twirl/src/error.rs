use thiserror::Error;

/// Errors surfaced by the library. The CLI maps these onto exit codes:
/// config errors -> 2, numeric errors -> 3, format/I-O errors -> 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error at offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("need more data before sampling (online buffer has {have}, need {need})")]
    NeedMoreData { have: usize, need: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Exit code category used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::NeedMoreData { .. } => 2,
            Error::Numeric(_) => 3,
            Error::Format { .. } | Error::Io(_) => 4,
        }
    }
}
