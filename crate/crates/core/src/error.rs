use thiserror::Error;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("model `{model}` has no parameter `{name}`")]
    UnknownParameter { model: String, name: String },

    #[error("parameter `{name}` is missing")]
    MissingParameter { name: String },

    #[error("parameter `{name}` = {value} violates constraint `{constraint}`")]
    ParameterConstraint {
        name: String,
        value: f64,
        constraint: &'static str,
    },

    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian at iterate (pivot ratio {pivot_ratio:.3e})")]
    SingularJacobian { pivot_ratio: f64 },

    #[error("no sign change of {what} on [{lo}, {hi}]")]
    NoSignChange { what: &'static str, lo: f64, hi: f64 },

    #[error("trajectory carries failure flags; classification refused")]
    FailedTrajectory,

    #[error("insufficient branch coverage: {0}")]
    InsufficientCoverage(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no limit cycle found: {0}")]
    NoCycle(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::UnknownModel(_)
                | Error::UnknownParameter { .. }
                | Error::MissingParameter { .. }
                | Error::ParameterConstraint { .. }
                | Error::DimensionMismatch { .. }
                | Error::InvalidInput(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}
