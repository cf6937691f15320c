use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown identifier `{0}`")]
    UnknownId(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("non-real characteristic roots at t = {t}, xi = {xi} (|Im| = {imag:e})")]
    NonRealRoots { t: f64, xi: f64, imag: f64 },
    #[error("multiple characteristic roots at t = {t}, xi = {xi} (gap = {gap:e})")]
    MultipleRoots { t: f64, xi: f64, gap: f64 },
    #[error("regularized roots lost separation at t = {t}, xi = {xi}")]
    SeparationLost { t: f64, xi: f64 },
    #[error("Neumann series not admissible: norm estimate {0} >= 0.5")]
    NormTooLarge(f64),
    #[error("step size controller stalled at xi = {xi}, t = {t}")]
    StepFailure { xi: f64, t: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("overflow guard: {0}")]
    Overflow(String),
    #[error("Fourier cutoff too small: coefficient mass {0:e} beyond 2N")]
    CutoffTooSmall(f64),
    #[error("derivative oracle unavailable: {0}")]
    Oracle(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("inequality violated at t = {t}, xi = {xi}: {detail}")]
    InequalityViolated { t: f64, xi: f64, detail: String },
}

pub type Result<T> = std::result::Result<T, HypError>;
