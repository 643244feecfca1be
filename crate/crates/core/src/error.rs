use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandauError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("density vanishes at the evaluation point (score undefined)")]
    ZeroDensity,
    #[error("{0} has no closed-form density at this time")]
    NoClosedForm(String),
    #[error("rejection sampler acceptance rate {rate:.2e} is below the floor")]
    RejectionRate { rate: f64 },
    #[error("blob density underflow around particle {0}")]
    IsolatedParticle(usize),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for LandauError {
    fn from(e: std::io::Error) -> Self {
        LandauError::Io(e.to_string())
    }
}

pub type Result<T, E = LandauError> = std::result::Result<T, E>;
