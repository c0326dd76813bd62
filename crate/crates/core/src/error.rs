use std::fmt;

use serde::{Deserialize, Serialize};

use crate::matcher::TraceRecord;

/// One violated inequality of a moment-feasibility check.
///
/// `slack` is signed: the inequality holds when `slack > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub inequality: String,
    pub slack: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (slack {:.6e})", self.inequality, self.slack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Infeasibility {
    pub violations: Vec<Violation>,
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {field} = {value} must be positive")]
    Domain { field: String, value: f64 },

    #[error("missing target: {0}")]
    MissingTarget(&'static str),

    #[error("infeasible targets: {0}")]
    Infeasible(Infeasibility),

    #[error("dimension error: matrix is {rows}x{cols}, need at least 2x2")]
    Dimension { rows: usize, cols: usize },

    #[error("degenerate variance: matrix is constant")]
    DegenerateVariance,

    #[error("gradient error at shape={shape}, value={value}: {reason}")]
    Gradient { shape: f64, value: f64, reason: String },

    #[error("non-finite gradient in layer {layer}")]
    LayerGradient { layer: String },

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<TraceRecord> },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn domain(field: impl Into<String>, value: f64) -> Self {
        Error::Domain { field: field.into(), value }
    }

    /// True for outcomes where the model cannot satisfy the requested targets.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
