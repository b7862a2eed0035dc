use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("record {record}: field `{field}`: {msg}")]
    Schema {
        record: usize,
        field: String,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("R² undefined: {0}")]
    UndefinedR2(String),

    #[error("degenerate sequence: variance {variance:e} <= {min_variance:e}")]
    DegenerateSequence { variance: f64, min_variance: f64 },

    #[error("causality error: step {source_step} is after prediction step {step}")]
    Causality { step: usize, source_step: usize },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dims mismatch: checkpoint has {found}, expected {expected}")]
    DimsMismatch { expected: String, found: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
