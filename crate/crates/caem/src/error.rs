//! One error enum for the whole crate.
//!
//! Variants are grouped by layer: tape/graph faults, model wiring faults,
//! statistics preconditions, data ingestion problems, and configuration
//! problems. [`Error::exit_code`] maps them onto the CLI's exit convention
//! (2 = bad input, 1 = internal).

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: expected {what} = {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("backward needs a scalar root, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("tensor does not belong to this tape")]
    DetachedRoot,

    #[error("recurrent state mismatch: {detail}")]
    StateMismatch { detail: String },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("need at least {needed} time steps, got {got}")]
    TooFewSteps { needed: usize, got: usize },

    #[error("empty input: {what}")]
    EmptyInput { what: String },

    #[error("dataset contains no usable windows")]
    EmptyDataset,

    #[error("{path}: no data rows")]
    EmptyFile { path: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("ground truth contains a single class only")]
    SingleClassTruth,

    #[error("missing required column {column:?}")]
    MissingColumn { column: String },

    #[error("row {row}: column {column:?} is not numeric")]
    NonNumericCell { row: usize, column: String },

    #[error("window length {len} does not divide into sub-windows of {sub}")]
    IndivisibleWindow { len: usize, sub: usize },

    #[error("segment of {rows} rows cannot fit a window of {window}")]
    FrameTooShort { rows: usize, window: usize },

    #[error("{what} = {value} is outside the allowed range")]
    RatioOutOfRange { what: String, value: f64 },

    #[error("expected {expected} signals, got {got}")]
    SignalCountMismatch { expected: usize, got: usize },

    #[error("unknown variant {name:?}")]
    UnknownVariant { name: String },

    #[error("invalid generator spec: {detail}")]
    BadSpec { detail: String },

    #[error("configuration error: {detail}")]
    Config { detail: String },

    #[error("malformed file: {detail}")]
    Format { detail: String },

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit code for the CLI: 2 for configuration and data problems the user
    /// can fix, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::BadSpec { .. }
            | Error::UnknownVariant { .. }
            | Error::MissingColumn { .. }
            | Error::NonNumericCell { .. }
            | Error::EmptyFile { .. }
            | Error::EmptyDataset
            | Error::FrameTooShort { .. }
            | Error::IndivisibleWindow { .. }
            | Error::RatioOutOfRange { .. }
            | Error::SignalCountMismatch { .. }
            | Error::TooFewSamples { .. }
            | Error::Format { .. }
            | Error::File { .. }
            | Error::Csv(_) => 2,
            _ => 1,
        }
    }

    /// Wrap an I/O error with the path it concerns.
    pub fn file(path: &std::path::Path, source: std::io::Error) -> Error {
        Error::File { path: path.display().to_string(), source }
    }
}
