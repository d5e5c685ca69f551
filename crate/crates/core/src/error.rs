use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}:{line}: {message}", file.display())]
    Csv {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("header mismatch between tables: {left:?} vs {right:?}")]
    HeaderMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },

    #[error("{}:{line}: dangling reference to id {id:?} in {table}", file.display())]
    DanglingReference {
        file: PathBuf,
        line: u64,
        table: String,
        id: String,
    },

    #[error("{}:{line}: label {value:?} is not 0 or 1", file.display())]
    InvalidLabel {
        file: PathBuf,
        line: u64,
        value: String,
    },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("schema mismatch: model expects {expected:?}, data has {found:?}")]
    SchemaMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("embedding file line {line}: {message}")]
    Embedding { line: usize, message: String },

    #[error("embedding file {} is empty", .0.display())]
    EmptyEmbeddingFile(PathBuf),

    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("attention query mode mismatch: {0}")]
    QueryMode(&'static str),

    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,

    #[error("variant mismatch: expected {expected}, found {found}")]
    VariantMismatch { expected: String, found: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("length mismatch: {left} scores vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("no positive labels")]
    NoPositiveLabels,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
