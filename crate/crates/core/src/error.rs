use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("division by zero: {0}")]
    DivisionByZero(String),
    #[error("pole: {0}")]
    Pole(String),
    #[error("contour validation failed: {0}")]
    Contour(String),
    #[error("no convergence within the doubling budget; deltas {deltas:?}")]
    Convergence { deltas: Vec<f64> },
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("non-finite integrand value at node {0}")]
    Evaluation(String),
    #[error("parameter error: {0}")]
    Parameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
