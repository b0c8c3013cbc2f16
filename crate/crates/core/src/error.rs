use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    #[error("numerical failure at iteration {iteration}: {reason}")]
    Numerical { iteration: usize, reason: String },

    #[error("diagnostic unavailable: {0}")]
    DiagnosticUnavailable(String),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn numerical(iteration: usize, reason: impl Into<String>) -> Self {
        Error::Numerical {
            iteration,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
