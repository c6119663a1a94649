use thiserror::Error;

use crate::gsf::ModelIndex;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("covariance is singular or indefinite")]
    DegenerateCovariance,

    #[error("innovation covariance is singular{}", .0.map(|m| format!(" for model {m}")).unwrap_or_default())]
    DegenerateInnovation(Option<ModelIndex>),

    #[error("iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("matched reduction needs ground-truth cluster labels")]
    MissingTruth,

    #[error("no gain available for {what}")]
    MissingGains { what: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
