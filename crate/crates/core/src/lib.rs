//! Numerical machinery for theta decompositions of Fourier-Jacobi forms.
//!
//! The crate evaluates theta functions with characteristics by certified
//! truncated lattice sums, enumerates unimodular matrices under trace bounds,
//! assembles truncated Klingen-Poincare series, and runs the verification
//! suites around them: theta transformation laws, the g1 decomposition
//! identities, the full-rank probe for coefficient tables, the degree-3
//! casework with its counterexample series, and the appendix congruence
//! identities.

pub mod appendix;
pub mod fj;
pub mod n3;
pub mod poincare;
pub mod report;
pub mod symmat;
pub mod theta;
pub mod unimod;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("matrix is not unimodular (det = {0})")]
    NotUnimodular(i64),
    #[error("blocks do not satisfy the symplectic relations: {0}")]
    NotSymplectic(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid theta characteristic: {0}")]
    BadCharacteristic(String),
    #[error("invalid half-even matrix: {0}")]
    BadHalfEven(String),
    #[error("empty matrix has no numerical rank")]
    EmptyMatrix,
    #[error("truncation budget infeasible: needed radius {needed} exceeds cap {cap}")]
    TruncationFailure { needed: usize, cap: usize },
    #[error("enumeration candidate count exceeded the cap of {0}")]
    EnumerationOverflow(usize),
    #[error("sample system for the transformation matrix stayed ill-conditioned after {0} resamples")]
    ResampleFailure(usize),
    #[error("quadrature grid too coarse: doubling changed the result by {change:.3e} (tol {tol:.3e})")]
    RefinementFailure { change: f64, tol: f64 },
    #[error("no strictly ordering perturbation found; tie witnesses: {0}")]
    PerturbationFailure(String),
    #[error("matrix does not stabilize the given point (residual {0:.3e})")]
    NotAStabilizer(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
