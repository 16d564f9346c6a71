use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("selection has no cores")]
    EmptySelection,

    #[error("cluster index {index} out of range for {clusters} clusters")]
    ClusterIndex { index: usize, clusters: usize },

    #[error("unknown preset {name:?}; available: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("no valid stage-1 start: device has no prime or performance cores")]
    NoStartCore,

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
