use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    #[default]
    None,
    /// A shock drawn from `unif(0, magnitude)` every `period` iterations.
    PeriodicUniform,
    /// Zero-mean normal noise at every iteration.
    Gaussian,
    /// Tables given explicitly for selected iterations.
    CustomTable,
}

/// How a scalar draw becomes an `S × A` table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ApplicationMode {
    /// One draw added to every entry.
    ScalarBroadcast,
    /// An independent draw per entry.
    #[default]
    PerEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomError {
    pub iteration: usize,
    /// Indexed `[state][action]`.
    pub table: Vec<Vec<f64>>,
}

/// Specification of the additive errors εₖ injected into the evaluation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ErrorModel {
    pub kind: ErrorKind,
    /// Shock period K.
    pub period: Option<usize>,
    /// Upper end of the uniform shock; defaults to K.
    pub magnitude: Option<f64>,
    /// Standard deviation of gaussian noise.
    pub std: Option<f64>,
    pub tables: Vec<CustomError>,
    pub mode: ApplicationMode,
    /// Seeds the error stream instead of the run seed when set.
    pub rng_seed: Option<u64>,
}

impl ErrorModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn periodic_uniform(period: usize) -> Self {
        Self {
            kind: ErrorKind::PeriodicUniform,
            period: Some(period),
            ..Self::default()
        }
    }

    pub fn gaussian(std: f64) -> Self {
        Self {
            kind: ErrorKind::Gaussian,
            std: Some(std),
            ..Self::default()
        }
    }

    pub fn custom(tables: Vec<CustomError>) -> Self {
        Self {
            kind: ErrorKind::CustomTable,
            tables,
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: ApplicationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ErrorKind::None => Ok(()),
            ErrorKind::PeriodicUniform => match self.period {
                Some(p) if p >= 1 => {
                    let m = self.magnitude.unwrap_or(p as f64);
                    if m >= 0.0 && m.is_finite() {
                        Ok(())
                    } else {
                        Err(Error::Config(format!("error magnitude {m} must be nonnegative")))
                    }
                }
                _ => Err(Error::Config("periodic_uniform errors need period >= 1".into())),
            },
            ErrorKind::Gaussian => match self.std {
                Some(s) if s >= 0.0 && s.is_finite() => Ok(()),
                _ => Err(Error::Config("gaussian errors need a nonnegative std".into())),
            },
            ErrorKind::CustomTable => {
                if self.tables.iter().any(|t| t.iteration == 0) {
                    Err(Error::Config("custom error iterations start at 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn fill<R: Rng>(&self, shape: (usize, usize), rng: &mut R, mut draw: impl FnMut(&mut R) -> f64) -> DMatrix<f64> {
        match self.mode {
            ApplicationMode::ScalarBroadcast => {
                let v = draw(rng);
                DMatrix::from_element(shape.0, shape.1, v)
            }
            ApplicationMode::PerEntry => {
                let mut m = DMatrix::zeros(shape.0, shape.1);
                // Row-major draw order, independent of the storage layout.
                for s in 0..shape.0 {
                    for a in 0..shape.1 {
                        m[(s, a)] = draw(rng);
                    }
                }
                m
            }
        }
    }
}

/// εₖ for iteration `k ≥ 1` as an `S × A` table.
pub fn inject_error(
    model: &ErrorModel,
    k: usize,
    shape: (usize, usize),
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    let zero = || DMatrix::zeros(shape.0, shape.1);
    match model.kind {
        ErrorKind::None => Ok(zero()),
        ErrorKind::PeriodicUniform => {
            let period = model
                .period
                .filter(|p| *p >= 1)
                .ok_or_else(|| Error::Config("periodic_uniform errors need period >= 1".into()))?;
            if k % period != 0 {
                return Ok(zero());
            }
            let high = model.magnitude.unwrap_or(period as f64);
            Ok(model.fill(shape, rng, |r| r.random::<f64>() * high))
        }
        ErrorKind::Gaussian => {
            let std = model.std.unwrap_or(0.0);
            let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
            Ok(model.fill(shape, rng, |r| normal.sample(r)))
        }
        ErrorKind::CustomTable => match model.tables.iter().find(|t| t.iteration == k) {
            None => Ok(zero()),
            Some(t) => {
                if t.table.len() != shape.0 || t.table.iter().any(|r| r.len() != shape.1) {
                    return Err(Error::ShapeMismatch(format!(
                        "custom error table for iteration {k} does not match {shape:?}"
                    )));
                }
                Ok(DMatrix::from_fn(shape.0, shape.1, |s, a| t.table[s][a]))
            }
        },
    }
}

/// Realized errors ε₁, ε₂, … of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorTrace {
    /// `tables[k - 1]` is εₖ.
    pub tables: Vec<DMatrix<f64>>,
    pub norms: Vec<f64>,
}

impl ErrorTrace {
    pub fn push(&mut self, eps: DMatrix<f64>) {
        self.norms.push(eps.amax());
        self.tables.push(eps);
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}
