use std::io;

/// Errors produced by the toolkit.
///
/// The variants are grouped so that a front end can map them onto a small
/// set of exit codes: malformed files, shape mismatches, invalid values and
/// numerical breakdowns.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// A file does not follow the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed input that violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Dimensions of two inputs do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A parameter is outside the domain of a density or estimator.
    #[error("domain error: {0}")]
    Domain(String),

    /// Requested more components than the data supports.
    #[error("rank deficient: requested {requested} components but numerical rank is {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    /// Iterative or spectral routine broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
