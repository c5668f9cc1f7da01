use std::io;

use thiserror::Error;

use crate::polarization::TwoQubitDensityMatrix;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented invariant or precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A conditional probability was requested for a zero-probability event.
    #[error("undefined conditional: {0}")]
    UndefinedConditional(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The tomography design does not span the operator space.
    #[error("inversion error: {0}")]
    Inversion(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("rank-deficient fit: {0}")]
    FitRank(String),

    /// The likelihood optimizer stopped without meeting its gradient tolerance.
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    Convergence {
        iterations: usize,
        grad_norm: f64,
        best: Box<TwoQubitDensityMatrix>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
