//! Error type shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} is not a power of two >= 2")]
    NotPowerOfTwo(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence length {got} does not match family requirement {want}")]
    SequenceLength { want: usize, got: usize },
    #[error("edit index ({i},{k}) out of range for n={n}")]
    EditOutOfRange { i: usize, k: usize, n: usize },
    #[error("bandwidth {rho} invalid for n={n}")]
    Bandwidth { rho: usize, n: usize },
    #[error("entry outside declared band: t_{j} must be zero for |j| > {rho}")]
    BandViolation { j: i64, rho: usize },
    #[error("unsupported model/family combination: {0}")]
    UnsupportedModel(String),
    #[error("word alphabet not supported: {0}")]
    UnsupportedWord(String),
    #[error("operator is singular or not a-potent: {0}")]
    BadOperator(String),
    #[error("zero vector where a nonzero vector is required")]
    ZeroVector,
    #[error("qubit count mismatch: {0}")]
    QubitMismatch(String),
    #[error("dense materialization over the {cap}-qubit cap (requested {got})")]
    ExplicitCap { cap: usize, got: usize },
    #[error("matrix is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not positive definite (min eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("condition number {kappa:.3e} exceeds cap {cap:.1e}")]
    KappaCap { kappa: f64, cap: f64 },
    #[error("infeasible error budget: {0}")]
    InfeasibleBudget(String),
    #[error("position oracle not injective on row {row}")]
    OracleNotInjective { row: usize },
    #[error("per-row sparsity bound {d} invalid (must be a power of two, 1..=n={n})")]
    BadSparsity { d: usize, n: usize },
    #[error("amplitude is zero where a nonzero amplitude is required")]
    ZeroAmplitude,
    #[error("kappa out of contract range: {0}")]
    KappaRange(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}
