use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("lookup index {index} out of range for table of {size} rows")]
    Lookup { index: usize, size: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFinite { param: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dictionary conflict: value `{value}` mapped to `{first}` (line {first_line}) and `{second}` (line {second_line})")]
    DictionaryConflict {
        value: String,
        first: String,
        first_line: usize,
        second: String,
        second_line: usize,
    },

    #[error("unmapped morphological value `{0}`")]
    Unmapped(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cluster error for language `{language}`: {msg}")]
    Cluster { language: String, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("alignment error at sentence {sentence}: {msg}")]
    Alignment { sentence: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("novel labels not in checkpoint schema: {}", .0.join(", "))]
    NovelLabels(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
