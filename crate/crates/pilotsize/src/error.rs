//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("class {label} has {count} samples, need at least {needed} to {action}")]
    ClassTooSmall {
        label: u8,
        count: usize,
        needed: usize,
        action: &'static str,
    },

    #[error("subsample size {m} outside valid range 2..={n}")]
    SubsampleSize { m: usize, n: usize },

    #[error("batch cannot be centered and scaled: {0}")]
    DegenerateBatch(String),

    #[error("separable data, slope undefined")]
    SeparableData,

    #[error("solver did not converge after {iterations} iterations ({context})")]
    NonConvergence { iterations: usize, context: String },

    #[error("signal too weak for RCS-CV: {degenerate} of {total} repetitions degenerate")]
    SignalTooWeak { degenerate: usize, total: usize },

    #[error(
        "insufficient bootstraps: {excluded} of {total} cases had fewer than 2 out-of-bag scores"
    )]
    InsufficientBootstraps { excluded: usize, total: usize },

    #[error("EIV estimation failed: {0}")]
    EivFailed(String),

    #[error("pilot set is probably inadequate: {0}")]
    InadequatePilot(String),

    #[error("Box-Cox fit failed: {0}")]
    BoxCoxFit(String),

    #[error("learning-curve fit failed: {0}")]
    LearningCurveFit(String),

    #[error("tolerance unreachable under LC model: {0}")]
    ToleranceUnreachable(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
