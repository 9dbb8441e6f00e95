use thiserror::Error;

use crate::solver::SolveReport;

/// Errors produced by the lattice homogenization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sizing error: {0}")]
    Sizing(String),

    #[error(
        "solver did not converge after {} iterations (relative residual {:.3e})",
        .0.iterations,
        .0.final_relative_residual
    )]
    NonConvergence(SolveReport),

    #[error("right-hand side has mean {mean:.3e} but the operator has no mass term")]
    IncompatibleRhs { mean: f64 },

    #[error("size {sites} exceeds the limit of {limit}")]
    SizeExceeded { sites: usize, limit: usize },

    #[error("subsolution check failed at site {site}: {reason}")]
    SubsolutionViolation { site: usize, reason: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("insufficient replicas: {0}")]
    InsufficientReplicas(String),

    #[error("study requires a reference homogenized coefficient")]
    MissingReference,

    #[error("invalid conductivity law: {0}")]
    InvalidLaw(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("identity check failed: {0}")]
    IdentityFailure(String),

    #[error("field format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
