use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("label {label} out of range for {num_classes} classes (line {line})")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("embedding cache has no entry for {} sentence(s): {}", .0.len(), .0.join(" | "))]
    CacheMiss(Vec<String>),

    #[error("malformed embedding cache: {0}")]
    CacheFormat(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cosine distance undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown {kind} `{name}` (available: {})", .available.join(", "))]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },

    #[error("non-finite {term} loss at epoch {epoch}, batch {batch}")]
    NonFinite {
        term: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("prototypes have not been projected onto sentences")]
    Unprojected,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
