// SPDX-License-Identifier: MIT OR Apache-2.0
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: dimension mismatch ({left:?} vs {right:?})")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{0}: non-finite input")]
    NonFinite(&'static str),
    #[error("{0}: matrix is singular or not positive definite")]
    Singular(&'static str),
    #[error("hidden dimension {got} too small for {what} (needs {needed})")]
    HiddenDimTooSmall {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("layout: {0}")]
    Layout(String),
    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
