use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// The variants line up with the exit-code classes of the command-line
/// front end: [`SmallBallError::Argument`] maps to usage errors, everything
/// else to numeric/consistency failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmallBallError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("critical perturbation: {0}")]
    Criticality(String),

    #[error("consistency check failed: {0}")]
    Consistency(String),

    #[error("pole: {0}")]
    Pole(String),
}

impl SmallBallError {
    pub fn is_argument(&self) -> bool {
        matches!(self, SmallBallError::Argument(_))
    }
}

pub type Result<T> = std::result::Result<T, SmallBallError>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(SmallBallError::Argument(msg.into()))
}
