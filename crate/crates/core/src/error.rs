use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("class {0} is already served by the model")]
    ClassCollision(u32),
    #[error("branch starts at layer {branch} but the model shares layers below {model}")]
    SplitMismatch { branch: usize, model: usize },
    #[error("label {0} is outside the evaluated class set")]
    UnknownLabel(u32),
    #[error("training failed: {0}")]
    Numeric(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Failures while decoding a model file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}, not a model file")]
    BadMagic([u8; 4]),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("model checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed model file: {0}")]
    Malformed(String),
}

/// Failures in dataset ingestion and increment bookkeeping.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("IDX magic mismatch: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic { expected: u32, found: u32 },
    #[error("truncated data file: {0}")]
    Truncated(String),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("csv row {row}: {message}")]
    CsvRow { row: usize, message: String },
    #[error("class {0} is not present in the dataset")]
    UnknownClass(u32),
    #[error("class set {0} of the increment plan is empty")]
    EmptyClassSet(usize),
    #[error("class {0} appears in more than one class set")]
    OverlappingClassSets(u32),
    #[error("increment {0} was already consumed")]
    AlreadyConsumed(usize),
    #[error("increment {requested} requested out of order, next is {expected}")]
    OutOfOrder { expected: usize, requested: usize },
    #[error("increment {0} does not exist in the plan")]
    UnknownIncrement(usize),
    #[error("dataset is empty")]
    Empty,
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}
