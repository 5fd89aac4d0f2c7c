use thiserror::Error;

/// Errors raised by the tensor network engine and its oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero norm")]
    ZeroNorm,

    #[error("charge mismatch: {0}")]
    ChargeMismatch(String),

    #[error("local dimension exceeded: occupation {occupation} at site {site} with d = {d}")]
    LocalDimensionExceeded { site: usize, occupation: usize, d: usize },

    #[error("bond {bond} out of range for a chain of length {length}")]
    BondOutOfRange { bond: usize, length: usize },

    #[error("site {site} out of range for a chain of length {length}")]
    SiteOutOfRange { site: usize, length: usize },

    #[error("state annihilated by truncation")]
    StateAnnihilated,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("indefinite charge: operator does not change the particle number by a fixed amount")]
    IndefiniteCharge,

    #[error("infeasible particle number {n} for L = {length}, d = {d}")]
    InfeasibleParticleNumber { n: i64, length: usize, d: usize },

    #[error("unsupported trotter order {0}")]
    UnsupportedOrder(u32),

    #[error("dense dimension {dim} exceeds the oracle cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("unfittable window: {0}")]
    UnfittableWindow(String),

    #[error("fit did not converge after {iterations} iterations (residual {residual:e})")]
    FitNotConverged {
        iterations: usize,
        residual: f64,
        best: crate::observables::FitParams,
    },

    #[error("missing sector {0}")]
    MissingSector(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::ChargeMismatch(msg.into())
}
