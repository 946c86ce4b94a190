use thiserror::Error;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or configuration.
    Usage,
    /// Input file or stream does not conform to its format.
    InputFormat,
    /// Input is well formed but the computation has no meaningful answer.
    Degenerate,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed stream: {0}")]
    MalformedStream(String),
    #[error("truncated NAL unit at byte offset {offset}")]
    TruncatedUnit { offset: usize },
    #[error("bitstream exhausted while reading {0}")]
    BitstreamExhausted(&'static str),
    #[error("missing {kind} with id {id}")]
    MissingParameterSet { kind: &'static str, id: u32 },
    #[error("unsupported profile or syntax: {0}")]
    UnsupportedProfile(String),

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("coverage gap: block (frame {frame}, mb_x {mb_x}, mb_y {mb_y}) is missing")]
    CoverageGap { frame: u32, mb_x: u32, mb_y: u32 },
    #[error("{what} out of range: {value}")]
    Range { what: &'static str, value: String },
    #[error("frame count mismatch: expected {expected}, found {found}")]
    FrameCountMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("weight table has no entry for key {0}")]
    MissingKey(f64),
    #[error("invalid weight table: {0}")]
    InvalidTable(String),

    #[error("accumulator has not ingested any frame")]
    EmptyAccumulator,
    #[error("every pixel is masked out")]
    AllMaskedOut,
    #[error("degenerate fingerprint: zero energy")]
    DegenerateFingerprint,
    #[error("malformed fingerprint file: {0}")]
    BadFingerprintFile(String),
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient frames: need at least {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },
    #[error("anchor condition {0} not observed")]
    MissingAnchor(String),
    #[error("insufficient calibration data: {0}")]
    InsufficientData(String),
    #[error("anchor bucket is empty for camera {0}")]
    EmptyBucket(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config(_) | Unsupported(_) => ErrorClass::Usage,
            EmptyInput(_)
            | EmptyAccumulator
            | AllMaskedOut
            | DegenerateFingerprint
            | InsufficientFrames { .. }
            | MissingAnchor(_)
            | InsufficientData(_)
            | EmptyBucket(_) => ErrorClass::Degenerate,
            _ => ErrorClass::InputFormat,
        }
    }

    pub(crate) fn schema(line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn range(what: &'static str, value: impl ToString) -> Self {
        Error::Range {
            what,
            value: value.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
