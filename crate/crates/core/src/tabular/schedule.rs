use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `max(α₁ ‖ε‖∞, α₂ λ_prev)`.
pub fn update_lambda_tabular(err_norm: f64, lambda_prev: f64, alpha1: f64, alpha2: f64) -> f64 {
    (alpha1 * err_norm).max(alpha2 * lambda_prev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ScheduleRule {
    /// λ fixed at its initial value.
    Constant,
    /// λₖ = max(α₁‖εₖ‖∞, α₂λₖ₋₁).
    ErrorAware { alpha1: f64, alpha2: f64 },
    /// λ₁, λ₂, … taken from a list; the initial value stays `lambda_init`.
    Prescribed { values: Vec<f64> },
}

/// The sequence of KL coefficients λ₀, λ₁, … of a run, grown one value per
/// iteration from the realized error norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSchedule {
    pub rule: ScheduleRule,
    pub lambda_init: f64,
    history: Vec<f64>,
}

impl CoefficientSchedule {
    pub fn constant(lambda: f64) -> Result<Self> {
        Self::new(ScheduleRule::Constant, lambda)
    }

    pub fn error_aware(alpha1: f64, alpha2: f64, lambda_init: f64) -> Result<Self> {
        Self::new(ScheduleRule::ErrorAware { alpha1, alpha2 }, lambda_init)
    }

    pub fn prescribed(lambda_init: f64, values: Vec<f64>) -> Result<Self> {
        Self::new(ScheduleRule::Prescribed { values }, lambda_init)
    }

    pub fn new(rule: ScheduleRule, lambda_init: f64) -> Result<Self> {
        if !(lambda_init > 0.0 && lambda_init.is_finite()) {
            return Err(Error::Config(format!("lambda_init must be positive, got {lambda_init}")));
        }
        match &rule {
            ScheduleRule::Constant => {}
            ScheduleRule::ErrorAware { alpha1, alpha2 } => {
                if !(*alpha1 >= 0.0) {
                    return Err(Error::Config(format!("alpha1 must be nonnegative, got {alpha1}")));
                }
                if !(*alpha2 > 0.0 && *alpha2 <= 1.0) {
                    return Err(Error::Config(format!("alpha2 must lie in (0, 1], got {alpha2}")));
                }
            }
            ScheduleRule::Prescribed { values } => {
                if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    return Err(Error::Config(format!("prescribed lambda {v} is not positive")));
                }
            }
        }
        Ok(Self {
            rule,
            lambda_init,
            history: vec![lambda_init],
        })
    }

    /// Drops every value after λ₀.
    pub fn reset(&mut self) {
        self.history.truncate(1);
    }

    /// Appends λₖ₊₁ given the realized ‖εₖ₊₁‖∞ and returns it.
    pub fn advance(&mut self, err_norm: f64) -> Result<f64> {
        let prev = *self.history.last().expect("history starts with lambda_init");
        let next = match &self.rule {
            ScheduleRule::Constant => prev,
            ScheduleRule::ErrorAware { alpha1, alpha2 } => {
                update_lambda_tabular(err_norm, prev, *alpha1, *alpha2)
            }
            ScheduleRule::Prescribed { values } => {
                *values.get(self.history.len() - 1).ok_or_else(|| {
                    Error::MismatchedSchedule(format!(
                        "prescribed schedule has only {} values",
                        values.len()
                    ))
                })?
            }
        };
        if !(next > 0.0) {
            return Err(Error::Config(format!(
                "lambda became {next} at iteration {}",
                self.history.len()
            )));
        }
        self.history.push(next);
        Ok(next)
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// λₖ.
    pub fn lambda(&self, k: usize) -> f64 {
        self.history[k]
    }

    /// ηₖ = 1/λₖ.
    pub fn eta(&self, k: usize) -> f64 {
        1.0 / self.history[k]
    }

    pub fn etas(&self) -> Vec<f64> {
        self.history.iter().map(|l| 1.0 / l).collect()
    }

    /// Zₖ = Σ_{j=0}^{k} ηⱼ for every recorded k.
    pub fn z_partial(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(0.0, |acc, l| {
                *acc += 1.0 / l;
                Some(*acc)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// True when every recorded λ equals λ₀.
    pub fn is_constant(&self) -> bool {
        self.history.iter().all(|l| *l == self.lambda_init)
    }
}
