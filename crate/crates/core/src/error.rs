use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token out of vocabulary: {0}")]
    TokenOutOfVocabulary(u32),

    #[error("malformed LM file: {0}")]
    MalformedLm(String),

    #[error("malformed scorer file: {0}")]
    MalformedScorer(String),

    #[error("unsupported version: {0}")]
    UnsupportedVersion(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("example {id}: {source}")]
    Example {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied data rather than bad arguments.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}
