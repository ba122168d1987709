use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed binary or text input. `record` is the 0-based record index
    /// when the failure happened inside a record.
    #[error("parse error at byte {offset}{}: {message}", record.map(|r| format!(" (record {r})")).unwrap_or_default())]
    Parse {
        offset: u64,
        record: Option<u64>,
        message: String,
    },

    #[error("invalid record `{id}`: field `{field}`: {message}")]
    InvalidRecord {
        id: String,
        field: &'static str,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported method: {0}")]
    Unsupported(String),

    #[error("{0}")]
    Mismatch(String),

    /// An error annotated with the stage or item it came from.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error beneath any [`Error::Context`] layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn parse(offset: u64, record: Option<u64>, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            record,
            message: message.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
