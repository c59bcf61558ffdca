//! Right-hand sides of the error-propagation bounds and soundness checks.
//!
//! For a run whose record `n` holds the gap of `πₙ`, both bounds are
//! evaluated at `k = n − 1`:
//!
//! * constant coefficient:
//!   `2/(1−γ) · 1/k · (‖Σ_{j=1}^k εⱼ‖∞ + 2 q_max + λ γ ln|A|)`
//! * dynamic coefficient with `ηⱼ = 1/λⱼ`, `Zₖ = Σ_{j=0}^k ηⱼ`:
//!   `2/(1−γ) · 1/Zₖ · (‖Σ_{j=1}^k ηⱼεⱼ‖∞ + (ηₖ₊₁ + η₀ + Σ_{j=0}^k |ηⱼ₊₁ − ηⱼ|) q_max + γ ln|A|)`
//!
//! `q_max` is the running maximum of `‖qⱼ‖∞` over `j = 0..=k+1`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{IterationRecord, IterationTrace};

/// Slack allowed when comparing a gap with its bound.
pub const BOUND_SLACK: f64 = 1e-9;

/// How `q_max` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QMax {
    /// Running maximum along the trajectory.
    Running,
    Fixed(f64),
}

fn running_q_max(trace: &IterationTrace, rule: QMax) -> Vec<f64> {
    match rule {
        QMax::Fixed(v) => vec![v; trace.len()],
        QMax::Running => {
            // Entry n − 1 covers q₀..qₙ.
            let mut out = Vec::with_capacity(trace.len());
            let mut m = trace.q_norms.first().copied().unwrap_or(0.0);
            for norm in trace.q_norms.iter().skip(1).take(trace.len()) {
                m = m.max(*norm);
                out.push(m);
            }
            out
        }
    }
}

fn check_lengths(trace: &IterationTrace) -> Result<()> {
    let n = trace.len();
    if trace.errors.len() != n || trace.q_norms.len() != n + 1 {
        return Err(Error::MismatchedSchedule(format!(
            "trace has {n} records, {} errors and {} value norms",
            trace.errors.len(),
            trace.q_norms.len()
        )));
    }
    if trace.schedule.len() < n {
        return Err(Error::MismatchedSchedule(format!(
            "schedule has {} coefficients for {n} records",
            trace.schedule.len()
        )));
    }
    Ok(())
}

fn horizon(gamma: f64) -> f64 {
    2.0 / (1.0 - gamma)
}

/// Constant-coefficient bound for each record; the first entry is `+∞`.
pub fn theorem1_bound(trace: &IterationTrace, lambda_const: f64, q_max: QMax) -> Result<Vec<f64>> {
    check_lengths(trace)?;
    if let Some(l) = trace.schedule.history().iter().find(|l| **l != lambda_const) {
        return Err(Error::MismatchedSchedule(format!(
            "trace used lambda = {l}, bound asked for constant {lambda_const}"
        )));
    }
    let q_max = running_q_max(trace, q_max);
    let entropy = lambda_const * trace.gamma * (trace.num_actions as f64).ln();
    let (ns, na) = trace.errors.tables.first().map_or((0, 0), |t| t.shape());
    let mut sum = DMatrix::zeros(ns, na);
    let mut out = Vec::with_capacity(trace.len());
    for (idx, qm) in q_max.iter().enumerate() {
        let k = idx;
        if k == 0 {
            out.push(f64::INFINITY);
        } else {
            sum += &trace.errors.tables[k - 1];
            out.push(horizon(trace.gamma) / k as f64 * (sum.amax() + 2.0 * qm + entropy));
        }
    }
    Ok(out)
}

/// Per-iteration terms of the dynamic-coefficient bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub iter: usize,
    /// `‖Σ ηⱼεⱼ‖∞ / Zₖ`.
    pub weighted_error_norm: f64,
    /// `Σ_{j=0}^k |ηⱼ₊₁ − ηⱼ|`.
    pub variation_term: f64,
    pub eta_first: f64,
    pub eta_next: f64,
    pub z_partial: f64,
    pub q_max: f64,
    /// `γ ln|A|`.
    pub entropy_term: f64,
    /// `2/(1−γ)`.
    pub horizon_factor: f64,
    pub total: f64,
    pub gap: f64,
    pub satisfied: bool,
}

/// Dynamic-coefficient bound with all of its terms, one report per record.
pub fn theorem2_report(trace: &IterationTrace, q_max: QMax) -> Result<Vec<BoundReport>> {
    check_lengths(trace)?;
    let q_max = running_q_max(trace, q_max);
    let etas = trace.schedule.etas();
    let entropy = trace.gamma * (trace.num_actions as f64).ln();
    let (ns, na) = trace.errors.tables.first().map_or((0, 0), |t| t.shape());
    let mut weighted = DMatrix::zeros(ns, na);
    let mut z = 0.0;
    let mut variation = 0.0;
    let mut out = Vec::with_capacity(trace.len());
    for (idx, (record, qm)) in trace.records.iter().zip(&q_max).enumerate() {
        let k = idx;
        z += etas[k];
        if k >= 1 {
            weighted += &trace.errors.tables[k - 1] * etas[k];
        }
        // The schedule normally holds ηₖ₊₁; otherwise reuse ηₖ.
        let eta_next = etas.get(k + 1).copied().unwrap_or(etas[k]);
        variation += (eta_next - etas[k]).abs();
        let total = horizon(trace.gamma) / z
            * (weighted.amax() + (eta_next + etas[0] + variation) * qm + entropy);
        out.push(BoundReport {
            iter: record.iter,
            weighted_error_norm: weighted.amax() / z,
            variation_term: variation,
            eta_first: etas[0],
            eta_next,
            z_partial: z,
            q_max: *qm,
            entropy_term: entropy,
            horizon_factor: horizon(trace.gamma),
            total,
            gap: record.gap,
            satisfied: record.gap <= total + BOUND_SLACK,
        });
    }
    Ok(out)
}

/// Dynamic-coefficient bound for each record.
pub fn theorem2_bound(trace: &IterationTrace, q_max: QMax) -> Result<Vec<f64>> {
    Ok(theorem2_report(trace, q_max)?.into_iter().map(|r| r.total).collect())
}

/// Fills the bound columns of a trace: the dynamic bound always, the
/// constant bound only when λ never changed.
pub fn annotate(trace: &mut IterationTrace) -> Result<()> {
    let thm2 = theorem2_bound(trace, QMax::Running)?;
    let thm1 = if trace.schedule.is_constant() {
        Some(theorem1_bound(trace, trace.schedule.lambda_init, QMax::Running)?)
    } else {
        None
    };
    for (i, r) in trace.records.iter_mut().enumerate() {
        r.bound_thm2 = Some(thm2[i]);
        r.bound_thm1 = thm1.as_ref().map(|b| b[i]);
    }
    Ok(())
}

/// `(‖Σ ηⱼεⱼ‖∞ / Σ ηⱼ, ‖Σ εⱼ‖∞ / k)` over j = 1..=k at the end of the run.
pub fn weighted_vs_uniform_error(trace: &IterationTrace) -> Result<(f64, f64)> {
    let k = trace.errors.len();
    if k == 0 {
        return Err(Error::Config("empty trace".into()));
    }
    if trace.schedule.len() <= k {
        return Err(Error::MismatchedSchedule("schedule shorter than the error trace".into()));
    }
    let (ns, na) = trace.errors.tables[0].shape();
    let mut weighted = DMatrix::zeros(ns, na);
    let mut plain = DMatrix::zeros(ns, na);
    let mut eta_sum = 0.0;
    for (j, eps) in trace.errors.tables.iter().enumerate() {
        let eta = trace.schedule.eta(j + 1);
        weighted += eps * eta;
        plain += eps;
        eta_sum += eta;
    }
    Ok((weighted.amax() / eta_sum, plain.amax() / k as f64))
}

pub fn write_reports<W: Write>(reports: &[BoundReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of checking recorded gaps against recorded bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub runs: usize,
    pub iterations: usize,
    pub violations: usize,
    /// `(run index, iter)` of each violation.
    pub violating: Vec<(usize, usize)>,
}

impl Certification {
    /// Checks one run's records and accumulates the result.
    pub fn check(&mut self, records: &[IterationRecord]) {
        let run = self.runs;
        self.runs += 1;
        for r in records {
            self.iterations += 1;
            let bad = |b: Option<f64>| b.is_some_and(|b| !(r.gap <= b + BOUND_SLACK));
            if bad(r.bound_thm2) || bad(r.bound_thm1) {
                self.violations += 1;
                self.violating.push((run, r.iter));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_maze, random_mdp, MazeSpec};
    use crate::tabular::{gvi_explicit_run, mdvi_run, CoefficientSchedule, CustomError, ErrorModel};

    #[test]
    fn constant_schedule_relation() {
        let mdp = random_mdp(5, 3, 0.9, 0).unwrap();
        let t = mdvi_run(&mdp, 2.0, &ErrorModel::gaussian(0.5), 40, 1).unwrap();
        let b1 = theorem1_bound(&t, 2.0, QMax::Running).unwrap();
        let b2 = theorem2_bound(&t, QMax::Running).unwrap();
        assert!(b1[0].is_infinite());
        for k in 1..t.len() {
            let expected = b1[k] * k as f64 / (k as f64 + 1.0);
            assert!((b2[k] - expected).abs() <= 1e-9 * expected.max(1.0));
        }
    }

    #[test]
    fn single_term_evaluation() {
        let mdp = random_mdp(3, 2, 0.9, 2).unwrap();
        let e = 0.75;
        let table = vec![vec![e; 2]; 3];
        let errors = ErrorModel::custom(vec![CustomError { iteration: 1, table }]);
        let t = mdvi_run(&mdp, 1.5, &errors, 3, 0).unwrap();
        let q_max = 7.0;
        let b1 = theorem1_bound(&t, 1.5, QMax::Fixed(q_max)).unwrap();
        let expect = 2.0 / 0.1 * (e + 2.0 * q_max + 1.5 * 0.9 * 2f64.ln());
        assert!((b1[1] - expect).abs() < 1e-10);
    }

    #[test]
    fn error_free_constant_bound_is_c_over_k() {
        let mdp = random_mdp(4, 2, 0.9, 3).unwrap();
        let t = mdvi_run(&mdp, 1.0, &ErrorModel::none(), 20, 0).unwrap();
        let b1 = theorem1_bound(&t, 1.0, QMax::Fixed(5.0)).unwrap();
        for k in 2..20 {
            assert!((b1[k] * k as f64 - b1[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatched_schedule_rejected() {
        let mdp = random_mdp(3, 2, 0.9, 0).unwrap();
        let s = CoefficientSchedule::error_aware(2.0, 0.9, 10.0).unwrap();
        let t = gvi_explicit_run(&mdp, s, &ErrorModel::none(), 5, 0).unwrap();
        assert!(matches!(
            theorem1_bound(&t, 10.0, QMax::Running),
            Err(Error::MismatchedSchedule(_))
        ));
        assert!(t.records.iter().all(|r| r.bound_thm1.is_none()));
    }

    #[test]
    fn weighted_and_uniform_errors() {
        let mdp = random_mdp(3, 2, 0.9, 0).unwrap();
        let same = ErrorModel::custom(
            (1..=10).map(|i| CustomError { iteration: i, table: vec![vec![1.0; 2]; 3] }).collect(),
        );
        let s = CoefficientSchedule::error_aware(2.0, 0.9, 10.0).unwrap();
        let t = gvi_explicit_run(&mdp, s.clone(), &same, 10, 0).unwrap();
        let (w, u) = weighted_vs_uniform_error(&t).unwrap();
        assert!((w - u).abs() < 1e-12);

        let t = gvi_explicit_run(&mdp, s.clone(), &ErrorModel::none(), 10, 0).unwrap();
        assert_eq!(weighted_vs_uniform_error(&t).unwrap(), (0.0, 0.0));

        let maze = generate_maze(&MazeSpec::with_seed(0)).unwrap();
        let t = gvi_explicit_run(maze.mdp(), s, &ErrorModel::periodic_uniform(100), 500, 0).unwrap();
        let (w, u) = weighted_vs_uniform_error(&t).unwrap();
        assert!(w < u, "weighted {w} uniform {u}");
    }

    #[test]
    fn gvi_maze_run_respects_bound() {
        let maze = generate_maze(&MazeSpec::with_seed(2)).unwrap();
        let s = CoefficientSchedule::error_aware(2.0, 0.9, 10.0).unwrap();
        let t = gvi_explicit_run(maze.mdp(), s, &ErrorModel::periodic_uniform(100), 400, 3).unwrap();
        let reports = theorem2_report(&t, QMax::Running).unwrap();
        assert!(reports.iter().all(|r| r.satisfied && r.total >= 0.0));
        let mut c = Certification::default();
        c.check(&t.records);
        assert_eq!(c.violations, 0);
    }

    #[test]
    fn inflated_gap_is_flagged() {
        let mdp = random_mdp(3, 2, 0.9, 0).unwrap();
        let mut t = mdvi_run(&mdp, 1.0, &ErrorModel::none(), 5, 0).unwrap();
        t.records[3].gap = 1e9;
        let mut c = Certification::default();
        c.check(&t.records);
        assert_eq!(c.violations, 1);
        assert_eq!(c.violating, vec![(0, 4)]);
    }
}
