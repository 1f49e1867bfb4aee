use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("supercritical Hawkes model: mean-reversion a = {a} must exceed excitation eta = {eta}")]
    Supercritical { a: f64, eta: f64 },

    #[error("grid index ({i}, {j}) outside the admissible range")]
    IndexOutOfRange { i: usize, j: usize },

    #[error("policy evaluation did not converge after {iterations} sweeps (last change {residual:e})")]
    EvaluationNotConverged { iterations: usize, residual: f64 },

    #[error(
        "policy iteration did not stabilise after {iterations} outer iterations ({changed} nodes still switching)"
    )]
    PolicyNotConverged { iterations: usize, changed: usize },

    #[error("barrier policy contract violated at y = {y}: x* = {x_star}, kappa* = {kappa_star}")]
    PolicyContract { y: f64, x_star: f64, kappa_star: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing PDE reference value for state ({x}, {y})")]
    MissingReference { x: f64, y: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EvaluationNotConverged { .. }
                | Error::PolicyNotConverged { .. }
                | Error::NonFinite(_)
                | Error::PolicyContract { .. }
        )
    }
}
