//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model packing, simulation, regression and control
/// synthesis.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameter vector length does not match the requested matrix shapes.
    #[error("theta/shape mismatch: expected {expected} entries, got {actual}")]
    ThetaShapeMismatch { expected: usize, actual: usize },

    /// Vector or matrix dimensions are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A non-finite value was encountered where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A rollout produced a non-finite or runaway state.
    #[error("diverged at step {step}")]
    Diverged { step: usize },

    /// The cart-pole mass matrix is (numerically) singular.
    #[error("singular configuration: mass matrix determinant {det:e}")]
    SingularConfiguration { det: f64 },

    /// The regularized kernel matrix failed to factorize even after jitter
    /// escalation.
    #[error("kernel matrix not PD")]
    KernelNotPd,

    /// The Riccati recursion hit a singular input-weight term.
    #[error("Riccati breakdown at step {step}")]
    RiccatiBreakdown { step: usize },

    /// The QP solver stopped at its iteration cap before reaching tolerance.
    #[error("QP not converged: KKT residual {residual:e} after {iterations} iterations")]
    QpNotConverged { residual: f64, iterations: usize },

    /// No multistart branch of the trajectory-optimization oracle reached the
    /// required stationarity certificate.
    #[error("oracle not converged: best value {value}, certificate {certificate:e}")]
    OracleNotConverged { value: f64, certificate: f64 },

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
