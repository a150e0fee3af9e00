use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite state derivative at t = {t}: x = {state:?}")]
    Integration { t: f64, state: Vec<f64> },

    #[error("quadratic program is infeasible")]
    Infeasible,

    #[error("quadratic program is ill-conditioned: no KKT system could be solved")]
    IllConditioned,

    #[error("invalid QP problem: {0}")]
    InvalidProblem(String),

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("road grade {theta_hat} rad is too steep for adhesion coefficient {mu} (mu + sin(theta_hat) = {margin})")]
    DegenerateGrade { theta_hat: f64, mu: f64, margin: f64 },

    #[error("insufficient samples: need at least {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("controller failure at t = {t}: {message}")]
    Controller { t: f64, message: String },

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
