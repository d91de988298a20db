use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite {what} at iteration {iteration}, sample {sample}")]
    NonFinite {
        what: &'static str,
        iteration: usize,
        sample: usize,
    },

    #[error(
        "approximate gradient norm {norm} exceeds the per-sample Lipschitz constant {bound} \
         at iteration {iteration}, sample {sample}"
    )]
    GradientBound {
        norm: f64,
        bound: f64,
        iteration: usize,
        sample: usize,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("min-norm solver stopped after {iterations} iterations with duality gap {gap:e}")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("{0} requires a deterministic objective")]
    NotDeterministic(&'static str),

    #[error("{}:{line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
