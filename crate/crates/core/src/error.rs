use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("failed to parse {what}: {msg}")]
    Parse { what: String, msg: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("manifest references missing file {0}")]
    MissingFile(PathBuf),

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("unknown site '{0}'")]
    UnknownSite(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("ROI {roi} has a constant time series")]
    ConstantSignal { roi: usize },

    #[error("node {0} has a zero-norm embedding")]
    ZeroNorm(usize),

    #[error("stratification infeasible: {0}")]
    Stratification(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            msg: msg.into(),
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
