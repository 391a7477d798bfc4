use thiserror::Error;

use crate::geometry::Manifold;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cannot project the zero vector onto the sphere")]
    ZeroVector,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("manifold mismatch: expected {expected}, found {found}")]
    ManifoldMismatch { expected: Manifold, found: Manifold },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point is not on {manifold}: {reason}")]
    NotOnManifold { manifold: Manifold, reason: String },

    #[error("{what} is singular at {point:?}")]
    DomainViolation { what: String, point: Vec<f64> },

    #[error("path enters the singular cutoff neighbourhood of {what} at step {step}")]
    SingularProximity { what: String, step: usize },

    #[error("torus step {step} has displacement {displacement:?} exceeding the 0.25 lift guard")]
    StepTooLarge { step: usize, displacement: Vec<f64> },

    #[error("path does not belong to this diffusion: {0}")]
    SpecMismatch(String),

    #[error("1-form {0} is not closed")]
    NonClosedForm(String),

    #[error("no samples remain after burn-in")]
    EmptyAfterBurnIn,

    #[error("{0} is not supported on {1}")]
    Unsupported(String, Manifold),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("at step {step}: {source}")]
    AtStep { step: usize, source: Box<Error> },

    #[error("on path {path}: {source}")]
    OnPath { path: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ (Error::SingularProximity { .. } | Error::StepTooLarge { .. }) => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn on_path(self, path: usize) -> Self {
        Error::OnPath {
            path,
            source: Box::new(self),
        }
    }

    /// Strips `AtStep`/`OnPath` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::OnPath { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
