use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("labels: {0}")]
    Labels(String),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("class {class} has {available} instances but {required} are required")]
    InsufficientClass {
        class: u32,
        available: usize,
        required: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot train on an empty labelled set")]
    EmptyLabelled,

    #[error("index: {0}")]
    Index(String),

    #[error("dataset hash mismatch: {0}")]
    DatasetMismatch(String),

    #[error("output directory {0} already contains results (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the command-line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated { .. }
            | Error::TrailingBytes(_)
            | Error::NonFinite { .. } => "format",
            Error::Shape(_) => "shape",
            Error::Labels(_) => "labels",
            Error::InfeasibleSpec(_) | Error::InsufficientClass { .. } => "infeasible",
            Error::Contract(_) => "contract",
            Error::ZeroNorm(_) | Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::EmptyLabelled => "training",
            Error::Index(_) => "index",
            Error::DatasetMismatch(_) => "dataset-mismatch",
            Error::OutputExists(_) => "output-exists",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
