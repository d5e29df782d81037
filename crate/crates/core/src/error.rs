use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("no certificate: {0}")]
    NoCertificate(String),

    #[error("algebraic solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoSolution { iterations: usize, residual: f64 },

    #[error("algebraic Jacobian is singular (sigma_min = {sigma_min:.3e})")]
    SingularManifold { sigma_min: f64 },

    #[error("model state error: {0}")]
    State(String),

    #[error("no equilibrium found (final residual {residual:.3e}, trace {trace:?})")]
    NoEquilibrium { residual: f64, trace: Vec<f64> },

    #[error("system is not contracting (measure {measure:.6e})")]
    NotContracting { measure: f64 },

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("degenerate certificate: {0}")]
    DegenerateCertificate(String),

    #[error("{count} finite box coordinates exceed the vertex enumeration cap of {cap}")]
    TooManyCoordinates { count: usize, cap: usize },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("degenerate region: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
