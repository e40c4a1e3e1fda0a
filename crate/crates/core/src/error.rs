use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("denominator {0} has a prime factor outside S")]
    NonSUnitDenominator(String),
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("primes in S must be distinct")]
    DuplicatePrime,
    #[error("zero vector")]
    ZeroVector,
    #[error("tolerance {tolerance:e} not reached before truncation cap (best bound {reached:e})")]
    ToleranceUnreachable { tolerance: f64, reached: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("quadratic form is degenerate at place {0}")]
    DegenerateForm(String),
    #[error("quadratic form is anisotropic at place {0}")]
    AnisotropicForm(String),
    #[error("p-adic precision exhausted: {0}")]
    PrecisionExhausted(String),
    #[error("insufficient p-adic precision at p={p}: need {needed}, have {have}")]
    InsufficientPadicPrecision { p: u64, needed: u32, have: u32 },
    #[error("region too large: about {estimated} candidates exceeds budget {budget}")]
    RegionTooLarge { estimated: f64, budget: u64 },
    #[error("denominator not invertible modulo {0}")]
    DenominatorNotInvertibleModQ(u64),
    #[error("matrix is not in SL_d(Z/qZ): determinant is {det} mod {q}")]
    NotInSLq { det: u64, q: u64 },
    #[error("vector is not primitive in Z_S^d")]
    NotPrimitive,
    #[error("vector does not lie in Z_S^d + w/q")]
    ShiftMismatch,
    #[error("orbit invariant shares a factor with q: {0}")]
    InvariantViolation(String),
    #[error("search budget exceeded: {0}")]
    SearchBudgetExceeded(String),
    #[error("residue count did not stabilize within precision budget {0}")]
    NotStabilized(u32),
    #[error("volume methods disagree: {0}")]
    MethodDisagreement(String),
    #[error("family out of admissible range: {0}")]
    FamilyOutOfRange(String),
    #[error("exact sampler unavailable: {0}")]
    UnsupportedExactSampler(String),
    #[error("series needs a product-box indicator: {0}")]
    NonIndicatorUnsupported(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
}

pub type Result<T> = std::result::Result<T, Error>;
