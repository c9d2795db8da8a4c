use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::linalg::EigenBasis;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimsMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("index {index} out of range for {len} voxels")]
    Index { index: usize, len: usize },
    #[error("vertex {vertex} has zero degree")]
    DegenerateGraph { vertex: usize },
    #[error("conjugate gradient did not converge (relative residuals {residuals:?})")]
    NotConverged { residuals: Vec<f64> },
    #[error("eigensolver converged {converged} of {requested} eigenpairs")]
    EigNotConverged {
        requested: usize,
        converged: usize,
        partial: Box<EigenBasis>,
    },
    #[error("system is singular: gamma = 0 and no seeds were given")]
    SingularSystem,
    #[error("seed system is numerically singular (condition estimate {condition:e})")]
    SingularSmallSystem { condition: f64 },
    #[error("basis of {m_use} vectors cannot represent {labels} labels")]
    InsufficientBasis { m_use: usize, labels: usize },
    #[error("image does not match the precomputed pack")]
    ImageMismatch,
    #[error("zero vector has no Rayleigh quotient")]
    ZeroVector,
    #[error("coarsened basis is empty")]
    EmptyBasis,
    #[error("basis source failed: {0}")]
    Source(String),
}
