//! Shared error type for the whole toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single violated invariant found while validating an observation table.
#[derive(Debug, Clone, PartialEq)]
pub enum TableViolation {
    /// A non-finite value (NaN or infinity) in the named column.
    NonFiniteValue { row: usize, column: String },
    /// A treatment label outside `0..n_levels`.
    UnknownTreatmentLabel { row: usize, label: usize, n_levels: usize },
    /// Mismatched row counts or empty table.
    ShapeMismatch { detail: String },
}

impl std::fmt::Display for TableViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NonFiniteValue { row, column } => {
                write!(f, "non-finite value at row {row}, column {column}")
            }
            Self::UnknownTreatmentLabel { row, label, n_levels } => {
                write!(f, "row {row}: treatment label {label} not in 0..{n_levels}")
            }
            Self::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Table validation failed; every violated invariant is listed.
    #[error("invalid table ({} violations): {}", .0.len(), format_violations(.0))]
    InvalidTable(Vec<TableViolation>),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("treatment level {0} missing from training rows")]
    LevelMissingInTrain(usize),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no rows observed at treatment level {0}")]
    EmptyTreatedGroup(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate score slope: {0}")]
    DegenerateSlope(String),

    #[error("correlation factorization failed: {0}")]
    FactorizationFailure(String),

    #[error("degenerate latent scores: {0}")]
    DegenerateScores(String),

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("all true effects are zero; weighted relative error is undefined")]
    AllTrueEffectsZero,

    #[error("no valid (i, k | j) triples with distinct indices")]
    NoValidTriples,

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("need at least 2 repetitions, have {0}")]
    InsufficientRepetitions(usize),

    #[error("invalid nuisance path: {0}")]
    InvalidPath(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[TableViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
