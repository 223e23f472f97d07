use thiserror::Error;

/// Which correlation spectrum an input problem refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::A => f.write_str("a"),
            Side::B => f.write_str("b"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("NonPositiveEigenvalue: {side}[{index}] = {value} must be > 0")]
    NonPositiveEigenvalue { side: Side, index: usize, value: f64 },

    #[error("DimensionMismatch: {side} has {found} eigenvalues, expected {expected}")]
    DimensionMismatch {
        side: Side,
        expected: usize,
        found: usize,
    },

    #[error("ShapeViolation: n = {n} must satisfy n >= n_prime = {n_prime} >= 1")]
    ShapeViolation { n: usize, n_prime: usize },

    #[error("OverflowEscalation: magnitude 2^{log2_magnitude:.1} exceeds the double range")]
    OverflowEscalation { log2_magnitude: f64 },

    #[error("ExactZero: {0}")]
    ExactZero(&'static str),

    #[error("IndexError: {0}")]
    Index(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("PrecisionExhausted: condition estimate {condition:.3e} not resolved at {bits} bits")]
    PrecisionExhausted { condition: f64, bits: u32 },

    #[error("MassDeficit: curve reaches cdf {reached}, needs at least {required}")]
    MassDeficit { reached: f64, required: f64 },

    #[error("SignResidue: density evaluated to {value:.3e}, below the negative tolerance")]
    SignResidue { value: f64 },

    #[error("EigenSolverFailure: Hermitian eigensolver did not converge on draw {draw}")]
    EigenSolverFailure { draw: u64 },

    #[error("RouteMismatch: draw {draw} eigenvalues differ between M^H M and M M^H by {deviation:.3e}")]
    RouteMismatch { draw: u64, deviation: f64 },

    #[error("TruncationWarning: last enumeration shell carries {shell_fraction:.3e} of the sum {partial}")]
    TruncationWarning { partial: f64, shell_fraction: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
