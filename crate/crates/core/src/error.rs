use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point has non-positive depth {depth} in the camera frame")]
    NonPositiveDepth { depth: f64 },

    #[error("innovation covariance is not positive definite")]
    SingularInnovation,

    #[error("covariance is not positive definite (min eigenvalue {min_eigenvalue})")]
    NonPositiveDefinite { min_eigenvalue: f64 },

    #[error("gradient has a non-finite component at waypoint {waypoint}")]
    NonFiniteGradient { waypoint: usize },

    #[error("line search failed after {iterations} iterations")]
    LineSearchFailure { iterations: usize },

    #[error("rejection sampling exhausted {attempts} attempts")]
    RejectionLimit { attempts: usize },

    #[error("baseline metric is zero")]
    ZeroBaseline,

    #[error("metric {value} and baseline {baseline} have different signs")]
    SignMismatch { value: f64, baseline: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("in trial {trial}: {source}")]
    AtTrial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn at_trial(self, trial: usize) -> Self {
        Error::AtTrial {
            trial,
            source: Box::new(self),
        }
    }

    /// The innermost error with step/trial context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::AtTrial { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
