use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while decoding a "GAIT" parameter file.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected \"GAIT\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("unexpected end of file at byte {offset}")]
    UnexpectedEof { offset: usize },
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("tensor name is not valid UTF-8")]
    InvalidName,
    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),
    #[error("tensor {name} is too large for the file format")]
    TooLarge { name: String },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("window of {len} samples is shorter than one STFT frame ({frame_len} samples)")]
    WindowTooShort { len: usize, frame_len: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("degenerate embedding: pre-normalization vector has zero norm")]
    DegenerateEmbedding,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("batch element {index}: {source}")]
    BatchElement {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("non-finite value in {tensor}")]
    NonFinite { tensor: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("session too short: {required_sec:.1} s of walking required, {provided_sec:.1} s provided")]
    SessionTooShort { required_sec: f64, provided_sec: f64 },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown appearance {appearance_id:?} for user {user_id:?}")]
    UnknownAppearance {
        user_id: String,
        appearance_id: String,
    },
    #[error("refinement rejected: distance {distance:.4} exceeds verify threshold {threshold:.4}")]
    RefinementRejected { distance: f64, threshold: f64 },
    #[error("model file: {0}")]
    Format(#[from] FormatError),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
