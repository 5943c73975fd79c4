//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition (empty cohort, bad lengths, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No comparable pair exists; the concordance index is undefined.
    #[error("no comparable pairs: concordance index is undefined")]
    NoComparablePairs,

    /// A hypothesis test cannot be formed (e.g. zero events overall).
    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    /// The Cox partial likelihood is undefined without at least one event.
    #[error("no events: all records censored")]
    NoEvents,

    /// An objective or parameter became NaN/inf during optimization.
    #[error("non-finite value during optimization: {0}")]
    NonFinite(String),

    /// Feature names do not match the schema a model was fitted with.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// Embedding dimension differs from the model's input dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A fusion component was used before being trained.
    #[error("untrained component: {0}")]
    UntrainedComponent(String),

    /// Two reports being compared were built from different fold plans.
    #[error("fold plan mismatch: {0}")]
    PlanMismatch(String),

    /// A data file could not be parsed; carries line/field context.
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Patient ids disagree across the files of a cohort bundle.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Checkpoint or report written by an incompatible format version.
    #[error("version mismatch: file has format_version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    /// Checkpoint failed its embedded checksum (truncation, corruption).
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
