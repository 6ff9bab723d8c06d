//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: String,
        got: String,
    },

    /// A matrix that must be finite contains NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The algebraic coupling loop matrix (I - Ev1*Ev2) is singular or
    /// numerically too ill-conditioned to trust.
    #[error("singular coupling loop: condition number {cond:.3e} exceeds {limit:.1e}")]
    SingularLoop { cond: f64, limit: f64 },

    /// The steady-pair block system [[I-A, -B], [C, D]] is singular.
    #[error("singular steady-state map: condition number {cond:.3e} exceeds {limit:.1e}")]
    SingularSteadyMap { cond: f64, limit: f64 },

    /// The condensed MPC Hessian is too ill-conditioned for a reliable solve.
    #[error("ill-conditioned condensed Hessian: condition number {cond:.3e} exceeds {limit:.1e}")]
    IllConditionedHessian { cond: f64, limit: f64 },

    /// Set-point grid cannot support the quadratic fit.
    #[error("set-point grid too small: {nodes} nodes < {needed} required for a quadratic in {dim} variables")]
    GridTooSmall {
        nodes: usize,
        needed: usize,
        dim: usize,
    },

    /// Grid spacing/node-count parameters are invalid.
    #[error("invalid grid parameters: {0}")]
    InvalidGrid(String),

    /// The quadratic-fit regression matrix is rank deficient.
    #[error("rank-deficient quadratic fit: {0}")]
    RankDeficient(String),

    /// The fitted quadratic is not positive definite on the free subspace.
    #[error("fitted quadratic not positive definite on the free subspace")]
    NotPositiveDefinite,

    /// A negotiation could not produce a usable committed outcome.
    #[error("negotiation failed: {0}")]
    NegotiationFailed(String),

    /// No filtering coefficient on the certification grid contracts.
    #[error("NO_CONVERGENT_BETA: spectral radius >= 1 for every beta on the grid")]
    NoConvergentBeta,

    /// Actuator handover would leave the subsystem without a solvable
    /// square steady map.
    #[error("steady map broken by handover: {0}")]
    SteadyMapBroken(String),

    /// Malformed or out-of-contract protocol message.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Invalid model, scenario or run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
