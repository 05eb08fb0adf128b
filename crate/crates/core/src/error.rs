use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument falls outside the region covered by a precomputed grid.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition does not hold.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value {value} at age {age}")]
    Evaluation { age: f64, value: f64 },

    #[error("Picard iteration stalled: increment {increment:e} after {iterations} iterations")]
    Convergence { iterations: usize, increment: f64 },

    #[error("cannot parse expression `{expr}`: {reason}")]
    Expression { expr: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
