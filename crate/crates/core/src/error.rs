use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operator is not Hermitian: max |X - X^dagger| = {deviation:.3e}")]
    NotHermitian { deviation: f64 },

    #[error("eigensolver failed to converge on a {dim}x{dim} matrix")]
    Eigensolver { dim: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid density operator: {0}")]
    InvalidState(String),

    #[error("invalid operation: {0}")]
    InvalidOperation(String),

    #[error("invalid waiting-time distribution: {0}")]
    InvalidDistribution(String),

    #[error("quadrature did not converge (residual estimate {residual:.3e})")]
    Quadrature { residual: f64 },

    #[error("invalid Hamiltonian model: {0}")]
    InvalidModel(String),

    #[error("invalid process: {0}")]
    InvalidProcess(String),

    #[error("Choi tensor dimension {dim} exceeds the configured limit {limit}")]
    ChoiBudget { dim: usize, limit: usize },

    #[error("expectation value has imaginary part {0:.3e}")]
    ComplexExpectation(f64),

    #[error("step index {index} out of range for a process with {len} intermediate steps")]
    StepOutOfRange { index: usize, len: usize },

    #[error("inequality `{check}` violated by {excess:.3e}")]
    BoundViolation { check: String, excess: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
