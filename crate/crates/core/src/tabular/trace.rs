use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::errors::ErrorTrace;
use super::schedule::CoefficientSchedule;
use crate::error::{Error, Result};
use crate::mdp::{Policy, QFunction};

/// One iteration of a tabular run.
///
/// Record `iter = n` describes the step that produced `πₙ` and `qₙ`: the
/// coefficient `λₙ₋₁` it used, the injected `‖εₙ‖∞` and the gap
/// `‖q* − q_{πₙ}‖∞`. Bounds refer to the same policy `πₙ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub lambda: f64,
    pub err_norm: f64,
    pub gap: f64,
    pub bound_thm2: Option<f64>,
    pub bound_thm1: Option<f64>,
}

/// Full record of a tabular run.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub label: String,
    pub gamma: f64,
    pub num_actions: usize,
    pub records: Vec<IterationRecord>,
    pub schedule: CoefficientSchedule,
    pub errors: ErrorTrace,
    /// `‖qⱼ‖∞` for j = 0..=N, in the explicit parametrization.
    pub q_norms: Vec<f64>,
    /// Sparse snapshots `(n, qₙ)` in the explicit parametrization.
    pub q_history: Vec<(usize, QFunction)>,
    pub policy_history: Vec<(usize, Policy)>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gap).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records(&self.records, out)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn write_records<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    let expected = ["iter", "lambda", "err_norm", "gap", "bound_thm2", "bound_thm1"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Config(format!(
            "unexpected trace header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Reads a trace CSV, reporting any problem as a corrupt trace.
pub fn load_records(path: &Path) -> Result<Vec<IterationRecord>> {
    let file = std::fs::File::open(path)?;
    read_records(file).map_err(|e| Error::CorruptTrace {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
