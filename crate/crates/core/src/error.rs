use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes: expected \"MWS1\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated file: needed {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("tensor `{name}` data region is not contiguous: expected offset {expected}, found {found}")]
    DataLayout {
        name: String,
        expected: u64,
        found: u64,
    },

    #[error("trailing bytes after data region: {0}")]
    TrailingBytes(u64),

    #[error("tensor `{name}` contains a non-finite value at index {index}")]
    NonFinite { name: String, index: usize },

    #[error("tensor `{name}` has {len} elements but shape {shape:?} requires {expected}")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },

    #[error("duplicate tensor name `{0}`")]
    DuplicateTensor(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("models share no tensor with a common shape")]
    EmptySignature,

    #[error("tensor `{0}` is missing from the model")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("degenerate input: standard deviation {0:e} is at or below the tolerance")]
    Degenerate(f64),

    #[error("labels must contain both classes")]
    SingleClass,

    #[error("invalid label {0}: expected 0 or 1")]
    InvalidLabel(i64),

    #[error("non-finite input value")]
    NonFiniteInput,

    #[error("could not draw a split containing both classes after {0} attempts")]
    SplitRetries(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration requires a reference model but none was given")]
    MissingReference,

    #[error("unsupported detector file version {0}")]
    Version(u32),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("could not train a model meeting the quality floors after {0} attempts")]
    ZooRetries(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::MissingReference => 2,
            Error::Degenerate(_) | Error::Diverged(_) | Error::NonFiniteInput | Error::ZooRetries(_) => 4,
            _ => 3,
        }
    }

    /// Short machine-readable tag used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic(_)
            | Error::Truncated { .. }
            | Error::MalformedHeader(_)
            | Error::DataLayout { .. }
            | Error::TrailingBytes(_)
            | Error::NonFinite { .. }
            | Error::ShapeMismatch { .. }
            | Error::DuplicateTensor(_) => "format",
            Error::Manifest(_) => "manifest",
            Error::Json(_) | Error::Csv(_) => "parse",
            Error::EmptySignature | Error::MissingTensor(_) | Error::TensorShape { .. } => {
                "architecture"
            }
            Error::Degenerate(_) => "degenerate",
            Error::SingleClass | Error::InvalidLabel(_) => "labels",
            Error::NonFiniteInput => "non_finite",
            Error::SplitRetries(_) => "split",
            Error::InvalidArgument(_) => "usage",
            Error::MissingReference => "missing_reference",
            Error::Version(_) => "version",
            Error::Diverged(_) => "diverged",
            Error::ZooRetries(_) => "zoo",
        }
    }
}
