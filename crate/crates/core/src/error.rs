use thiserror::Error;

/// Errors produced by the recommendation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("ratio undefined for feature {feature}: reference total is zero")]
    UndefinedRatio { feature: usize },

    #[error("intended basket is empty")]
    InvalidAnchor,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("unknown unit label `{0}`")]
    UnknownUnit(String),

    #[error("unit label `{label}` matches {count} rules")]
    AmbiguousUnit { label: String, count: usize },

    #[error("catalog is empty after joining sources")]
    EmptyCatalog,

    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),

    #[error("unknown product `{0}`")]
    UnknownProduct(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("join error: {0}")]
    Join(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Regex(#[from] regex::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
