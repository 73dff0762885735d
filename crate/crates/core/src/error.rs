use thiserror::Error;

/// Errors surfaced by the library layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    #[error("invalid entropy sequence: {0}")]
    InvalidEntropySequence(String),
    #[error("penalized entropy needs eigenvalues >= 1: {0}")]
    InvalidPenalizedShape(String),
    #[error("weight matrix precondition violated: {0}")]
    InvalidWeight(String),
    #[error("argument outside the valid range: {0}")]
    OutOfValidRange(String),
    #[error("sub-exponential sum lemma input invalid: {0}")]
    InvalidLemmaInput(String),
    #[error("constraint g^2 >= 2 p_G violated: {0}")]
    GConstraintViolated(String),
    #[error("smoothness parameter must exceed 1/2: {0}")]
    InvalidSmoothness(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("weight order W^2 <= D_G^2 violated: {0}")]
    InvalidWeightOrder(String),
    #[error("link function overflow: {0}")]
    LinkOverflow(String),
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error("solver produced inconsistent state: {0}")]
    SolverInconsistency(String),
    #[error("no concentration radius found: {0}")]
    NoConcentrationRadius(String),
    #[error("brute-force level too large: {0}")]
    LevelTooLarge(String),
    #[error("experiment degenerate: {0}")]
    ExperimentDegenerate(String),
    #[error("partial reports do not match: {0}")]
    AggregationMismatch(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
