use thiserror::Error;

use crate::modes::ModeIndex;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A mode ended up with a negative death probability.
    #[error(
        "mode {mode} has p+q = {mass:.6} > 1 (d = {death:.6}); {}",
        suggestion_text(*.suggested_c_b)
    )]
    ProbabilityOverflow {
        mode: ModeIndex,
        mass: f64,
        death: f64,
        /// Smallest branching constant restoring `d_k >= 0.05` on every mode,
        /// or `None` when no branching constant can (flip mass alone too big).
        suggested_c_b: Option<f64>,
    },

    #[error("invalid model parameters: {0}")]
    InvalidModel(String),

    #[error("tree exceeded node budget {budget} (partial count {partial})")]
    BudgetExceeded { budget: usize, partial: usize },

    #[error("Picard iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("semi-implicit level {level} became unstable at t = {time} (|value| = {magnitude:e})")]
    SchemeUnstable { level: usize, time: f64, magnitude: f64 },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("statistical test inconclusive: {0}")]
    Inconclusive(String),
}

fn suggestion_text(c_b: Option<f64>) -> String {
    match c_b {
        Some(c) => format!("use C_b >= {c:.6}"),
        None => "no branching constant fixes this; increase C_f".to_string(),
    }
}
