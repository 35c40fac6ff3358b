use std::fmt;

use serde::Serialize;

use crate::solver::Backup;

/// A single failed model invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// `(state, action)` the rule failed at, when it is local to one pair.
    pub index: Option<(usize, usize)>,
    pub rule: String,
}

impl Violation {
    pub fn at(state: usize, action: usize, rule: impl Into<String>) -> Self {
        Self {
            index: Some((state, action)),
            rule: rule.into(),
        }
    }

    pub fn global(rule: impl Into<String>) -> Self {
        Self {
            index: None,
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some((s, a)) => write!(f, "({s},{a}): {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {} violation(s), first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidModel(Vec<Violation>),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("conjugate solver did not converge after {iterations} steps")]
    ConjugateNotConverged { iterations: usize, best: Backup },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model file: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
