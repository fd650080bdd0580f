use num_complex::Complex64;
use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model failed validation: {0}")]
    InvalidModel(ValidationReport),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("grid with n = {n} cannot resolve the model: {reason}")]
    GridTooCoarse { n: usize, reason: String },

    #[error("density is not normalized (integral = {integral:.3e})")]
    NotNormalized { integral: f64 },

    #[error("generator null space has dimension {dim}, expected 1 (chain is not irreducible at this discretization)")]
    Reducible { dim: usize },

    #[error("exponent t*|G| = {scale:.3e} exceeds the cap {cap:.3e}; split the time interval")]
    ExponentialOverflow { scale: f64, cap: f64 },

    #[error("eigensolver failed: {0}")]
    EigenSolver(String),

    #[error("top eigenvalue is not simple: {first} and {second} are within {threshold:.1e}")]
    DegenerateTop {
        first: Complex64,
        second: Complex64,
        threshold: f64,
    },

    #[error("Perron eigenvector is not positive: {0}")]
    NotPositive(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("derivative cross-check failed for {quantity}: finite differences {finite_difference:.10e} vs spectral {spectral:.10e}")]
    DerivativeMismatch {
        quantity: &'static str,
        finite_difference: f64,
        spectral: f64,
    },

    #[error("tail slope a = {a} is outside the admissible range ({lower:.10e}, {upper:.10e})")]
    OutOfRange { a: f64, lower: f64, upper: f64 },

    #[error("cumulant generating function is not strictly convex at theta = {theta}: mu'' = {second:.3e}")]
    NotConvex { theta: f64, second: f64 },

    #[error("computation did not converge after {rounds} rounds: {detail}")]
    NonConvergent { rounds: usize, detail: String },

    #[error("least-squares fit is ill-conditioned (condition number {cond:.3e}); widen the t span")]
    IllConditioned { cond: f64 },

    #[error("test function is not admissible: {0}")]
    Inadmissible(String),

    #[error("effective sample size {ess:.2} is below 10; reduce t or change the tilt")]
    LowEffectiveSampleSize { ess: f64 },

    #[error("oracle table would need {cells} cells (limit {limit})")]
    GridBlowup { cells: usize, limit: usize },

    #[error("decay fit failed: {0}")]
    DecayFit(String),

    #[error("remainder does not decay: {0}")]
    NonDecayingRemainder(String),

    #[error("Poisson equation is not solvable: {0}")]
    Solvability(String),

    #[error("moment generating function overflows: log magnitude {log_magnitude:.1}")]
    MgfOverflow { log_magnitude: f64 },
}
