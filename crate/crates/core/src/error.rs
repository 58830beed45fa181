use std::path::PathBuf;

/// Errors shared by every subsystem of the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A persisted artifact failed to parse. `offset` is the byte position
    /// at which decoding gave up.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("record {0} not found")]
    NotFound(u64),

    /// The unnormalized posterior vanished; no place in the database is
    /// plausible under the current observation and transition mass.
    #[error("lost state: posterior mass is zero")]
    LostState,

    #[error("storage error on {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
