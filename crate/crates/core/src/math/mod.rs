//! Numerical kernel: logit transforms, least squares in logit space, fit
//! diagnostics and Kendall rank correlation.
//!
//! Everything here is a pure function of its inputs. Accuracies are fractions
//! in `[0, 1]`; anything that goes through [`logit`] is a [`LogitValue`].

mod kendall;
mod ols;

pub use kendall::{kendall_tau, kendall_tau_with, TauVariant};
pub use ols::{fit_ols, mae_points, r_squared, FitDiagnostics};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default clamping margin for accuracies of exactly 0 or 1.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-6;

/// Relative singular-value cutoff below which a design is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("accuracy {value} is outside [{eps}, 1 - {eps}] and clamping is disabled")]
    Domain { value: f64, eps: f64 },
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("design matrix is rank deficient (rank {rank} of {columns} columns including intercept)")]
    RankDeficient { rank: usize, columns: usize },
    #[error("too few models: {n} rows for {k} regressors (need at least {})", k + 1)]
    TooFewModels { n: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {required} values, got {got}")]
    TooShort { required: usize, got: usize },
    #[error("target values are constant; R² is undefined")]
    DegenerateTarget,
    #[error("every pair is tied in at least one ranking; tau is undefined")]
    AllTied,
}

/// A finite real on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitValue(f64);

impl LogitValue {
    pub fn new(value: f64) -> Result<Self, MathError> {
        if value.is_finite() {
            Ok(Self(value))
        } else {
            Err(MathError::NonFinite(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn expit(self) -> f64 {
        expit(self.0)
    }
}

/// `ln(x / (1 - x))` with no clamping. Returns ±∞ at the endpoints and NaN outside `[0, 1]`.
pub fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

/// Inverse of [`logit`]: `1 / (1 + e^-z)`.
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        // avoids overflow of e^-z for very negative z
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// How accuracies at or beyond the `[eps, 1 - eps]` band are mapped before taking a logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamp {
    eps: f64,
    enabled: bool,
}

impl Default for Clamp {
    fn default() -> Self {
        Self {
            eps: DEFAULT_CLAMP_EPS,
            enabled: true,
        }
    }
}

impl Clamp {
    pub fn new(eps: f64) -> Self {
        Self { eps, enabled: true }
    }

    /// Rejects out-of-band accuracies instead of clamping them.
    pub fn strict(eps: f64) -> Self {
        Self {
            eps,
            enabled: false,
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    /// Maps an accuracy into `[eps, 1 - eps]`, warning once per clamped value.
    pub fn apply(&self, x: f64) -> Result<f64, MathError> {
        if x.is_nan() {
            return Err(MathError::NonFinite(x));
        }
        let (lo, hi) = (self.eps, 1.0 - self.eps);
        if (lo..=hi).contains(&x) {
            return Ok(x);
        }
        if !self.enabled {
            return Err(MathError::Domain {
                value: x,
                eps: self.eps,
            });
        }
        let clamped = x.clamp(lo, hi);
        log::warn!("accuracy {x} clamped to {clamped} before logit");
        Ok(clamped)
    }

    pub fn logit(&self, x: f64) -> Result<LogitValue, MathError> {
        LogitValue::new(logit(self.apply(x)?))
    }
}

/// A linear function on the logit scale: `weights · x + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    weights: Vec<f64>,
    intercept: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, intercept: f64) -> Result<Self, MathError> {
        if weights.is_empty() {
            return Err(MathError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if let Some(&bad) = weights
            .iter()
            .chain(std::iter::once(&intercept))
            .find(|v| !v.is_finite())
        {
            return Err(MathError::NonFinite(bad));
        }
        Ok(Self { weights, intercept })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    /// Evaluates the model on logit-scale inputs.
    pub fn eval_logit(&self, logits: &[f64]) -> Result<f64, MathError> {
        if logits.len() != self.dimension() {
            return Err(MathError::DimensionMismatch {
                expected: self.dimension(),
                got: logits.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(logits)
            .fold(self.intercept, |acc, (w, x)| acc + w * x))
    }
}

/// Predicted accuracy `expit(Σ wⱼ·logit(accⱼ) + b)` for raw ID accuracies.
pub fn predict(model: &LinearModel, id_accuracies: &[f64], clamp: &Clamp) -> Result<f64, MathError> {
    if id_accuracies.len() != model.dimension() {
        return Err(MathError::DimensionMismatch {
            expected: model.dimension(),
            got: id_accuracies.len(),
        });
    }
    let logits = id_accuracies
        .iter()
        .map(|&a| clamp.logit(a).map(LogitValue::get))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(expit(model.eval_logit(&logits)?))
}
