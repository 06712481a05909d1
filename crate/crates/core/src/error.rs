use std::path::PathBuf;

/// Errors produced by the library.
///
/// Variants are grouped by how the CLI reports them: usage problems,
/// data problems (bad files, mismatched inputs) and numeric failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate meme id {0:?}")]
    DuplicateId(String),

    #[error("meme {meme_id:?}: entity {entity:?} is listed under both {first} and {second}")]
    ConflictingRole {
        meme_id: String,
        entity: String,
        first: crate::Role,
        second: crate::Role,
    },

    #[error("meme {meme_id:?}: {message}")]
    InvalidRecord { meme_id: String, message: String },

    #[error("malformed BIO sequence at position {position}: {message}")]
    MalformedBio { position: usize, message: String },

    #[error("embedding file: {0}")]
    Embedding(String),

    #[error("missing embedding for id {0:?}")]
    MissingId(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("substitution provider: {0}")]
    Provider(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
