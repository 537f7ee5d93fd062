use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("burn-in of {available} time units is shorter than {required}")]
    BurnInTooShort { available: f64, required: f64 },
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("lag {tau} is not beyond the filter support {t0}")]
    LagInsideSupport { tau: f64, t0: f64 },
    #[error("no reliable arrival (snr {snr:.3})")]
    NoReliableArrival { snr: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no trapped modes")]
    NoTrappedModes,
    #[error("insufficient decay margin: bottom mass {mass:.3e} for mode {mode}")]
    InsufficientDecay { mode: usize, mass: f64 },
    #[error("branch {branch} has a hole at xi = {xi}")]
    BranchHole { branch: usize, xi: f64 },
    #[error("trajectory left the domain at t = {t}")]
    DomainExit { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("no ray found in the shooting box")]
    NoSolution,
    #[error("non-generic triple: conjugate points")]
    Conjugate,
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
