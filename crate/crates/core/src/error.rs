use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid moments: {0}")]
    InvalidMoments(String),

    #[error("unphysical state: smallest eigenvalue of V + i*Omega is {0:e}")]
    UnphysicalState(f64),

    #[error("matrix is not symplectic (max deviation {0:e})")]
    NonSymplectic(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),

    #[error("heralding probability is zero; fidelity undefined")]
    ZeroProbability,

    #[error("oscillator above threshold: eps/gamma = {0} (must be < 1/2)")]
    AboveThreshold(f64),

    #[error("unsupported photon number N = {0} for this construction")]
    UnsupportedN(usize),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
