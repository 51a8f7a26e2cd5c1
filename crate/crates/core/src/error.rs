use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value {value} outside the domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid profile parameters: {0}")]
    InvalidProfile(String),

    #[error("invalid filter specification: {0}")]
    FilterSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("LSTD-Q system is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
