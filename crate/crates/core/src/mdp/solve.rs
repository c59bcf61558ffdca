use nalgebra::{DMatrix, DVector};

use super::ops::{argmax_actions, bellman_evaluation, bellman_optimality, expectation};
use super::types::{Policy, QFunction, TabularMdp};
use crate::error::{Error, Result};

const EVAL_TOL: f64 = 1e-12;
const REFINEMENT_PASSES: usize = 6;

/// Default iteration cap of [`solve_optimal`].
pub const DEFAULT_VI_CAP: usize = 1_000_000;

/// `‖T_π q − q‖∞`.
pub fn evaluation_residual(q: &QFunction, pi: &Policy, mdp: &TabularMdp) -> f64 {
    bellman_evaluation(q, pi, mdp).distance(q)
}

/// `‖T q − q‖∞` for the optimality operator.
pub fn optimality_residual(q: &QFunction, mdp: &TabularMdp) -> f64 {
    bellman_optimality(q, mdp).distance(q)
}

fn state_kernel(pi: &Policy, mdp: &TabularMdp) -> DMatrix<f64> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut p_pi = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = pi.probs()[(s, a)];
            if w == 0.0 {
                continue;
            }
            let row = mdp.transition().row(s * na + a);
            for n in 0..ns {
                p_pi[(s, n)] += w * row[n];
            }
        }
    }
    p_pi
}

/// Exact `q_π` by an LU solve of `(I − γ P_π) v = r_π` with iterative
/// refinement, followed by `q = r + γ P v`.
pub fn evaluate_policy_exact(pi: &Policy, mdp: &TabularMdp) -> Result<QFunction> {
    let ns = mdp.num_states();
    if pi.probs().shape() != (ns, mdp.num_actions()) {
        return Err(Error::ShapeMismatch(format!(
            "policy {:?} vs MDP ({ns}, {})",
            pi.probs().shape(),
            mdp.num_actions()
        )));
    }
    let system = DMatrix::identity(ns, ns) - state_kernel(pi, mdp) * mdp.gamma();
    let r_pi = expectation(pi, mdp.reward());
    let lu = system.clone().lu();
    let mut v = lu
        .solve(&r_pi)
        .ok_or_else(|| Error::InvalidMdp("singular evaluation system".into()))?;

    let mut q = QFunction::new(mdp.backup(&v));
    let mut residual = evaluation_residual(&q, pi, mdp);
    for _ in 0..REFINEMENT_PASSES {
        if residual <= EVAL_TOL * q.sup_norm().max(1.0) {
            return Ok(q);
        }
        let correction = lu
            .solve(&(&r_pi - &system * &v))
            .ok_or_else(|| Error::InvalidMdp("singular evaluation system".into()))?;
        v += correction;
        q = QFunction::new(mdp.backup(&v));
        residual = evaluation_residual(&q, pi, mdp);
    }
    if residual <= EVAL_TOL * q.sup_norm().max(1.0) {
        Ok(q)
    } else {
        Err(Error::NonConvergence {
            iterations: REFINEMENT_PASSES,
            residual,
        })
    }
}

/// `q_π` by fixed-point iteration of `T_π` from zero.
pub fn evaluate_policy_iterative(
    pi: &Policy,
    mdp: &TabularMdp,
    tol: f64,
    max_iterations: usize,
) -> Result<QFunction> {
    let mut q = QFunction::zeros(mdp.num_states(), mdp.num_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        let next = bellman_evaluation(&q, pi, mdp);
        residual = next.distance(&q);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        residual,
    })
}

/// Unregularized value iteration to `‖Tq − q‖∞ ≤ tol`, then a few
/// policy-iteration sweeps that replace `q` by the exact value of its greedy
/// policy whenever that lowers the residual.
///
/// The returned policy is deterministic with ties broken towards the lowest
/// action index.
pub fn solve_optimal(mdp: &TabularMdp, tol: f64) -> Result<(QFunction, Policy)> {
    solve_optimal_with_cap(mdp, tol, DEFAULT_VI_CAP)
}

pub fn solve_optimal_with_cap(
    mdp: &TabularMdp,
    tol: f64,
    max_iterations: usize,
) -> Result<(QFunction, Policy)> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let mut q = QFunction::zeros(mdp.num_states(), mdp.num_actions());
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iterations {
        let next = bellman_optimality(&q, mdp);
        residual = next.distance(&q);
        q = next;
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: max_iterations,
            residual,
        });
    }

    let mut actions = argmax_actions(&q);
    for _ in 0..50 {
        let pi = Policy::deterministic(&actions, mdp.num_actions());
        let q_pi = evaluate_policy_exact(&pi, mdp)?;
        let r = optimality_residual(&q_pi, mdp);
        let next = argmax_actions(&q_pi);
        if r <= residual {
            q = q_pi;
            residual = r;
        }
        if next == actions {
            break;
        }
        actions = next;
    }
    let pi = Policy::deterministic(&argmax_actions(&q), mdp.num_actions());
    Ok((q, pi))
}

/// `‖q* − q_π‖∞`.
pub fn optimality_gap(q_star: &QFunction, pi: &Policy, mdp: &TabularMdp) -> Result<f64> {
    Ok(evaluate_policy_exact(pi, mdp)?.distance(q_star))
}

/// Per-state values `v(s) = ⟨π, q⟩(s)`.
pub fn state_values(q: &QFunction, pi: &Policy) -> DVector<f64> {
    expectation(pi, &q.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::random_mdp;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_state(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, reward),
            gamma,
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn geometric_series_value() {
        let mdp = single_state(3.0, 0.9);
        let q = evaluate_policy_exact(&Policy::uniform(1, 1), &mdp).unwrap();
        assert_relative_eq!(q.values[(0, 0)], 3.0 / 0.1, epsilon = 1e-12);
    }

    #[test]
    fn single_state_optimum_is_one_hundred() {
        let mdp = single_state(1.0, 0.99);
        let (q, pi) = solve_optimal(&mdp, 1e-12).unwrap();
        assert_relative_eq!(q.values[(0, 0)], 100.0, epsilon = 1e-9);
        assert_eq!(pi.probs()[(0, 0)], 1.0);
    }

    #[test]
    fn deterministic_chain_closed_form() {
        // State 0: action 0 stays (reward 0), action 1 moves to goal state 1.
        // State 1 is rewarding and absorbing: reward 1 forever.
        let gamma: f64 = 0.9;
        let mut p = DMatrix::zeros(4, 2);
        p[(0, 0)] = 1.0;
        p[(1, 1)] = 1.0;
        p[(2, 1)] = 1.0;
        p[(3, 1)] = 1.0;
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let mdp = TabularMdp::new(p, r, gamma, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let (q, pi) = solve_optimal(&mdp, 1e-12).unwrap();
        let goal = 1.0 / (1.0 - gamma);
        assert_relative_eq!(q.values[(1, 0)], goal, epsilon = 1e-9);
        assert_relative_eq!(q.values[(0, 1)], gamma * goal, epsilon = 1e-9);
        assert_relative_eq!(q.values[(0, 0)], gamma * gamma * goal, epsilon = 1e-9);
        assert_eq!(pi.probs()[(0, 1)], 1.0);
        // tie in the goal state goes to action 0
        assert_eq!(pi.probs()[(1, 0)], 1.0);
    }

    #[test]
    fn exact_evaluation_has_small_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..10 {
            let mdp = random_mdp(5, 3, 0.95, seed).unwrap();
            let probs = DMatrix::from_fn(5, 3, |_, _| rng.random::<f64>() + 0.01);
            let mut norm = probs.clone();
            for (mut row, r) in norm.row_iter_mut().zip(probs.row_iter()) {
                row.copy_from(&(r / r.sum()));
            }
            let pi = Policy::from_probs(norm).unwrap();
            let q = evaluate_policy_exact(&pi, &mdp).unwrap();
            assert!(evaluation_residual(&q, &pi, &mdp) <= 1e-10);
            let it = evaluate_policy_iterative(&pi, &mdp, 1e-13, 100_000).unwrap();
            assert!(q.distance(&it) < 1e-9);
        }
    }

    #[test]
    fn iterative_evaluation_reports_nonconvergence() {
        let mdp = random_mdp(4, 2, 0.99, 1).unwrap();
        let pi = Policy::uniform(4, 2);
        assert!(matches!(
            evaluate_policy_iterative(&pi, &mdp, 1e-12, 5),
            Err(Error::NonConvergence { iterations: 5, .. })
        ));
    }

    #[test]
    fn optimal_q_matches_policy_enumeration() {
        for seed in 0..5 {
            let mdp = random_mdp(3, 2, 0.9, seed).unwrap();
            let (q_star, pi_star) = solve_optimal(&mdp, 1e-12).unwrap();
            assert!(optimality_residual(&q_star, &mdp) <= 1e-12);
            // all 2^3 deterministic policies
            let mut best = DMatrix::from_element(3, 2, f64::NEG_INFINITY);
            for code in 0..8usize {
                let actions: Vec<usize> = (0..3).map(|s| (code >> s) & 1).collect();
                let q = evaluate_policy_exact(&Policy::deterministic(&actions, 2), &mdp).unwrap();
                best = best.zip_map(&q.values, f64::max);
            }
            assert!((&best - &q_star.values).amax() < 1e-9);
            let q_pi = evaluate_policy_exact(&pi_star, &mdp).unwrap();
            assert!(q_pi.distance(&q_star) < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_tolerance_and_cap() {
        let mdp = random_mdp(3, 2, 0.99, 0).unwrap();
        assert!(solve_optimal(&mdp, 0.0).is_err());
        assert!(matches!(
            solve_optimal_with_cap(&mdp, 1e-12, 3),
            Err(Error::NonConvergence { .. })
        ));
    }
}
