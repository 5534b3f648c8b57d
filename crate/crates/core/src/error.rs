//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter domain: {0}")]
    ParamDomain(String),

    #[error("insufficient data: need {needed}, have {have} ({what})")]
    InsufficientData {
        what: String,
        needed: usize,
        have: usize,
    },

    #[error("optimization failed: {message} (last iterate: {last_iterate:?})")]
    Optimization {
        message: String,
        last_iterate: Vec<f64>,
    },

    #[error("invalid variogram: {0}")]
    InvalidVariogram(String),

    #[error("graph is disconnected: components {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("graph too large: {have} nodes, limit {limit}")]
    GraphTooLarge { have: usize, limit: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("degenerate prior: every ensemble tree has zero weight product")]
    DegeneratePrior,

    #[error("sampler degeneracy: acceptance rate {rate:.3e} below floor")]
    SamplerDegenerate { rate: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data integrity: {0}")]
    Integrity(String),

    #[error("validation: {0}")]
    Validation(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap with a higher-level context string (e.g. cluster/window ids).
    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for input-validation failures (CLI exit code 2).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Validation(_)
            | Error::Config(_)
            | Error::ParamDomain(_) => true,
            Error::Context { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
