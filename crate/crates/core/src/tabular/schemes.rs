use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::errors::{inject_error, ErrorModel, ErrorTrace};
use super::schedule::CoefficientSchedule;
use super::trace::{IterationRecord, IterationTrace};
use crate::bounds;
use crate::error::{Error, Result};
use crate::mdp::{
    clip_log_policy, expectation, kl_divergence_logs, log_softmax_rows, optimality_gap,
    regularized_greedy, solve_optimal, Policy, QFunction, TabularMdp, PROB_FLOOR,
};

/// Default lower clip of `ln π` where it enters an update.
pub const DEFAULT_LOG_CLIP: f64 = -50.0;

/// Tolerance used when solving for `q*` to measure gaps.
pub const Q_STAR_TOL: f64 = 1e-12;

/// Which of the equivalent parametrizations a run iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TabularScheme {
    /// `π ∝ πₖ exp(qₖ/λₖ)` with an explicit KL penalty in the evaluation step.
    Explicit,
    /// Unit-temperature softmax with the log-policy reward and the λₖ/λₖ₊₁ rescaling.
    Stable,
    /// Softmax of the η-weighted average of all past values.
    Averaged,
}

impl TabularScheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::Explicit => "explicit",
            Self::Stable => "stable",
            Self::Averaged => "averaged",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub iterations: usize,
    pub seed: u64,
    /// Store `qₙ` and `πₙ` whenever `n` is a multiple; 0 stores nothing.
    pub snapshot_every: usize,
    /// Lower clip of `ln π` in the stable scheme.
    pub log_clip: f64,
    /// Precomputed optimal values; solved for when absent.
    pub q_star: Option<QFunction>,
    /// Fill the bound columns after the run.
    pub with_bounds: bool,
}

impl RunOptions {
    pub fn new(iterations: usize, seed: u64) -> Self {
        Self {
            iterations,
            seed,
            snapshot_every: 0,
            log_clip: DEFAULT_LOG_CLIP,
            q_star: None,
            with_bounds: true,
        }
    }

    pub fn snapshots(mut self, every: usize) -> Self {
        self.snapshot_every = every;
        self
    }
}

/// One explicit step: `π' = G^λ_π(q)`, `q' = r + γP(⟨π', q⟩ − λ KL(π'‖π))`.
pub fn mdvi_step(q: &QFunction, pi: &Policy, lambda: f64, mdp: &TabularMdp) -> Result<(Policy, QFunction)> {
    let next = regularized_greedy(q, pi, lambda, 0.0)?;
    let q_next = kl_backup(q, &next, pi, lambda, mdp);
    Ok((next, q_next))
}

fn kl_backup(q: &QFunction, pi: &Policy, baseline: &Policy, lambda: f64, mdp: &TabularMdp) -> QFunction {
    let v = expectation(pi, &q.values) - kl_divergence_logs(pi, baseline).values * lambda;
    QFunction::new(mdp.backup(&v))
}

fn softmax_policy(logits: &DMatrix<f64>) -> Result<Policy> {
    Policy::from_log_probs(log_softmax_rows(logits))
}

/// One step of the implicit-KL form with a constant coefficient:
/// `π = softmax(q/λ)`, `q' = λ ln π + r + γP⟨π, q − λ ln π⟩`.
pub fn munchausen_step(q: &QFunction, lambda: f64, mdp: &TabularMdp) -> Result<(Policy, QFunction)> {
    munchausen_step_with_clip(q, lambda, mdp, DEFAULT_LOG_CLIP)
}

pub fn munchausen_step_with_clip(
    q: &QFunction,
    lambda: f64,
    mdp: &TabularMdp,
    log_clip: f64,
) -> Result<(Policy, QFunction)> {
    if !(lambda > 0.0) {
        return Err(Error::DegenerateTemperature(lambda));
    }
    let pi = softmax_policy(&(&q.values / lambda))?;
    let scaled_log = clip_log_policy(pi.log_probs(), log_clip) * lambda;
    let v = expectation(&pi, &(&q.values - &scaled_log));
    let mut next = mdp.backup(&v);
    next += scaled_log;
    Ok((pi, QFunction::new(next)))
}

/// One step of the stable form: `π = softmax(q)`,
/// `q' = ln π + r/λₖ₊₁ + (λₖ/λₖ₊₁) γ P⟨π, q − ln π⟩`.
pub fn gvi_stable_step(
    q: &QFunction,
    lambda_k: f64,
    lambda_k1: f64,
    mdp: &TabularMdp,
) -> Result<(Policy, QFunction)> {
    gvi_stable_step_with_clip(q, lambda_k, lambda_k1, mdp, DEFAULT_LOG_CLIP)
}

pub fn gvi_stable_step_with_clip(
    q: &QFunction,
    lambda_k: f64,
    lambda_k1: f64,
    mdp: &TabularMdp,
    log_clip: f64,
) -> Result<(Policy, QFunction)> {
    if !(lambda_k > 0.0) || !(lambda_k1 > 0.0) {
        return Err(Error::DegenerateTemperature(lambda_k.min(lambda_k1)));
    }
    let pi = softmax_policy(&q.values)?;
    let log_pi = clip_log_policy(pi.log_probs(), log_clip);
    let v = expectation(&pi, &(&q.values - &log_pi));
    let mut next = mdp.expect_next(&v) * (mdp.gamma() * lambda_k / lambda_k1);
    next += mdp.reward() / lambda_k1;
    next += log_pi;
    Ok((pi, QFunction::new(next)))
}

/// `π ∝ prev^{1−ζ} · target^ζ`, row by row.
pub fn geometric_interpolation(prev: &Policy, target: &Policy, zeta: f64) -> Result<Policy> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::Config(format!("interpolation weight {zeta} outside (0, 1]")));
    }
    if prev.probs().shape() != target.probs().shape() {
        return Err(Error::ShapeMismatch("interpolated policies differ in shape".into()));
    }
    if zeta < 1.0 {
        for (idx, (&t, &p)) in target.probs().iter().zip(prev.probs().iter()).enumerate() {
            if t > PROB_FLOOR && p <= PROB_FLOOR {
                let rows = prev.probs().nrows();
                return Err(Error::AbsoluteContinuityViolation {
                    state: idx % rows,
                    action: idx / rows,
                    p1: t,
                });
            }
        }
    }
    let logits = prev.log_probs() * (1.0 - zeta) + target.log_probs() * zeta;
    softmax_policy(&logits)
}

enum State {
    Explicit { q: QFunction },
    Stable { q: QFunction },
    Averaged { q: QFunction, h: QFunction, z: f64 },
}

/// Runs one of the three parametrizations for `opts.iterations` steps.
///
/// Every scheme draws εₖ₊₁ from the same stream before step k, advances the
/// schedule to λₖ₊₁ = f(‖εₖ₊₁‖∞, λₖ), and then updates with λₖ, so runs with
/// identical seeds see identical errors and coefficients.
pub fn run_scheme(
    mdp: &TabularMdp,
    scheme: TabularScheme,
    mut schedule: CoefficientSchedule,
    errors: &ErrorModel,
    opts: &RunOptions,
) -> Result<IterationTrace> {
    if opts.iterations == 0 {
        return Err(Error::Config("a run needs at least one iteration".into()));
    }
    errors.validate()?;
    schedule.reset();
    let q_star = match &opts.q_star {
        Some(q) => q.clone(),
        None => solve_optimal(mdp, Q_STAR_TOL)?.0,
    };
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(errors.rng_seed.unwrap_or(opts.seed));
    let mut pi = Policy::uniform(ns, na);
    let zeros = QFunction::zeros(ns, na);
    let mut state = match scheme {
        TabularScheme::Explicit => State::Explicit { q: zeros.clone() },
        TabularScheme::Stable => State::Stable {
            q: QFunction::new(pi.log_probs().clone()),
        },
        TabularScheme::Averaged => State::Averaged {
            q: zeros.clone(),
            h: zeros.clone(),
            z: schedule.eta(0),
        },
    };

    let mut trace = IterationTrace {
        label: scheme.name().to_string(),
        gamma: mdp.gamma(),
        num_actions: na,
        records: Vec::with_capacity(opts.iterations),
        schedule: schedule.clone(),
        errors: ErrorTrace::default(),
        q_norms: vec![0.0],
        q_history: Vec::new(),
        policy_history: Vec::new(),
    };
    let snapshot = |n: usize| opts.snapshot_every > 0 && n % opts.snapshot_every == 0;
    if snapshot(0) {
        trace.q_history.push((0, zeros.clone()));
        trace.policy_history.push((0, pi.clone()));
    }

    for k in 0..opts.iterations {
        let eps = inject_error(errors, k + 1, (ns, na), &mut rng)?;
        let lambda_k = schedule.lambda(k);
        let lambda_next = schedule.advance(eps.amax())?;

        let (next_pi, explicit_q) = match &mut state {
            State::Explicit { q } => {
                let (next_pi, mut next_q) = mdvi_step(q, &pi, lambda_k, mdp)?;
                next_q.values += &eps;
                *q = next_q.clone();
                (next_pi, next_q)
            }
            State::Stable { q } => {
                let (next_pi, mut next_q) =
                    gvi_stable_step_with_clip(q, lambda_k, lambda_next, mdp, opts.log_clip)?;
                next_q.values += &eps / lambda_next;
                let log_pi = clip_log_policy(next_pi.log_probs(), opts.log_clip);
                let explicit = QFunction::new((&next_q.values - log_pi) * lambda_next);
                *q = next_q;
                (next_pi, explicit)
            }
            State::Averaged { q, h, z } => {
                let next_pi = regularized_greedy(h, &pi, 0.0, 1.0 / *z)?;
                let mut next_q = kl_backup(q, &next_pi, &pi, lambda_k, mdp);
                next_q.values += &eps;
                let eta_next = 1.0 / lambda_next;
                let z_next = *z + eta_next;
                h.values = &h.values * (*z / z_next) + &next_q.values * (eta_next / z_next);
                *z = z_next;
                *q = next_q.clone();
                (next_pi, next_q)
            }
        };
        if !explicit_q.is_finite() {
            return Err(Error::NumericalDivergence {
                step: k + 1,
                what: "non-finite value table".into(),
            });
        }

        let gap = optimality_gap(&q_star, &next_pi, mdp)?;
        let n = k + 1;
        trace.q_norms.push(explicit_q.sup_norm());
        trace.errors.push(eps);
        trace.records.push(IterationRecord {
            iter: n,
            lambda: lambda_k,
            err_norm: *trace.errors.norms.last().expect("just pushed"),
            gap,
            bound_thm2: None,
            bound_thm1: None,
        });
        if snapshot(n) {
            trace.q_history.push((n, explicit_q));
            trace.policy_history.push((n, next_pi.clone()));
        }
        pi = next_pi;
    }
    trace.schedule = schedule;
    if opts.with_bounds {
        bounds::annotate(&mut trace)?;
    }
    Ok(trace)
}

/// Constant-coefficient mirror-descent value iteration.
pub fn mdvi_run(
    mdp: &TabularMdp,
    lambda_const: f64,
    errors: &ErrorModel,
    iters: usize,
    seed: u64,
) -> Result<IterationTrace> {
    let mut trace = run_scheme(
        mdp,
        TabularScheme::Explicit,
        CoefficientSchedule::constant(lambda_const)?,
        errors,
        &RunOptions::new(iters, seed),
    )?;
    trace.label = "mdvi".into();
    Ok(trace)
}

/// The explicit scheme with a dynamic coefficient schedule.
pub fn gvi_explicit_run(
    mdp: &TabularMdp,
    schedule: CoefficientSchedule,
    errors: &ErrorModel,
    iters: usize,
    seed: u64,
) -> Result<IterationTrace> {
    let mut trace = run_scheme(mdp, TabularScheme::Explicit, schedule, errors, &RunOptions::new(iters, seed))?;
    trace.label = "gvi_explicit".into();
    Ok(trace)
}

pub fn gvi_stable_run(
    mdp: &TabularMdp,
    schedule: CoefficientSchedule,
    errors: &ErrorModel,
    iters: usize,
    seed: u64,
) -> Result<IterationTrace> {
    let mut trace = run_scheme(mdp, TabularScheme::Stable, schedule, errors, &RunOptions::new(iters, seed))?;
    trace.label = "gvi_stable".into();
    Ok(trace)
}

pub fn averaged_iteration_run(
    mdp: &TabularMdp,
    schedule: CoefficientSchedule,
    errors: &ErrorModel,
    iters: usize,
    seed: u64,
) -> Result<IterationTrace> {
    let mut trace = run_scheme(mdp, TabularScheme::Averaged, schedule, errors, &RunOptions::new(iters, seed))?;
    trace.label = "averaged".into();
    Ok(trace)
}
