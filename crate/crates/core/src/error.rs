use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KfpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("diffusion matrix Q is not symmetric (max asymmetry {0:e})")]
    NonSymmetricQ(f64),
    #[error("diffusion matrix Q has a negative eigenvalue {0:e}")]
    NegativeEigenvalueQ(f64),
    #[error("Gramian is singular at t = {t:e} (min eigenvalue {min_eig:e})")]
    SingularGramian { t: f64, min_eig: f64 },
    #[error("matrix exponential overflows at t = {0:e}")]
    OverflowRegime(f64),
    #[error("unsupported field backend for {0}")]
    UnsupportedBackend(&'static str),
    #[error("field support is unbounded")]
    UnboundedSupport,
    #[error("operation requires tr B >= 0, got {0}")]
    TraceConditionViolated(f64),
    #[error("integrand tail is not integrable: {0}")]
    NonIntegrableTail(String),
    #[error("Riesz potential tail diverges: {0}")]
    DivergentTail(String),
    #[error("requested D = {d} outside [{lo}, {hi}]")]
    InvalidDRequest { d: f64, lo: f64, hi: f64 },
    #[error("small-time decay too slow: fitted slope {slope} <= s = {s}")]
    SlowSmallTimeDecay { slope: f64, s: f64 },
    #[error("monotonicity violated at index {index}: {detail}")]
    MonotonicityViolation { index: usize, detail: String },
    #[error("bad exponents: {0}")]
    BadExponents(String),
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, KfpError>;
