//! Regularized operators on tabular policies and value tables.
//!
//! Every greedy and maximum computation runs in log space with the per-state
//! maximum subtracted before exponentiation, so coefficients close to zero
//! or value tables with large magnitudes do not overflow.

use nalgebra::{DMatrix, DVector};

use super::types::{Policy, QFunction, TabularMdp, ValueVector, LOG_FLOOR, PROB_FLOOR};
use crate::error::{Error, Result};

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch(format!("{what}: got {got:?}, expected {want:?}")));
    }
    Ok(())
}

/// Stable `ln Σ exp(x)` of one row; returns the shift-free value.
pub fn log_sum_exp(row: impl IntoIterator<Item = f64>) -> f64 {
    let row: Vec<f64> = row.into_iter().collect();
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Row-wise log-softmax of a logits table.
pub fn log_softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        // Shift first so the normalizer is added to O(1) numbers.
        let max = row.max();
        row.add_scalar_mut(-max);
        let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        row.add_scalar_mut(-lse);
    }
    out
}

/// `⟨π, f⟩`, the per-state expectation of `f` under `π`.
pub fn expectation(pi: &Policy, f: &DMatrix<f64>) -> DVector<f64> {
    let prod = pi.probs().component_mul(f);
    DVector::from_iterator(prod.nrows(), prod.row_iter().map(|r| r.sum()))
}

/// Per-state `KL(p1 ‖ p2)`.
pub fn kl_divergence(p1: &Policy, p2: &Policy) -> Result<ValueVector> {
    check_shape("kl_divergence", p2.probs().shape(), p1.probs().shape())?;
    let (ns, na) = p1.probs().shape();
    let mut out = DVector::zeros(ns);
    for s in 0..ns {
        let mut acc = 0.0;
        for a in 0..na {
            let p = p1.probs()[(s, a)];
            if p <= PROB_FLOOR {
                continue;
            }
            if p2.probs()[(s, a)] <= PROB_FLOOR {
                return Err(Error::AbsoluteContinuityViolation {
                    state: s,
                    action: a,
                    p1: p,
                });
            }
            acc += p * (p1.log_probs()[(s, a)] - p2.log_probs()[(s, a)]);
        }
        out[s] = acc.max(0.0);
    }
    Ok(ValueVector::new(out))
}

/// Per-state `⟨p1, ln p1 − ln p2⟩` from the stored log tables, without the
/// support check of [`kl_divergence`]. Meant for iterates of the form
/// `p1 ∝ p2 · exp(f)`, whose support matches `p2` by construction even when
/// some of `p2`'s entries have decayed below [`PROB_FLOOR`].
pub fn kl_divergence_logs(p1: &Policy, p2: &Policy) -> ValueVector {
    let diff = p1.log_probs() - p2.log_probs();
    let v = expectation(p1, &diff);
    ValueVector::new(v.map(|x| x.max(0.0)))
}

/// Per-state Shannon entropy `H(π) = −⟨π, ln π⟩`.
pub fn entropy(pi: &Policy) -> ValueVector {
    let (ns, na) = pi.probs().shape();
    let max = (na as f64).ln();
    let values = DVector::from_fn(ns, |s, _| {
        let h: f64 = (0..na)
            .map(|a| pi.probs()[(s, a)])
            .zip((0..na).map(|a| pi.log_probs()[(s, a)]))
            .filter(|(p, _)| *p > 0.0)
            .map(|(p, l)| -p * l)
            .sum();
        h.clamp(0.0, max)
    });
    ValueVector::new(values)
}

fn greedy_logits(q: &QFunction, baseline: &Policy, lambda_kl: f64, tau_entropy: f64) -> Result<DMatrix<f64>> {
    let temperature = lambda_kl + tau_entropy;
    if !(temperature > 0.0) || lambda_kl < 0.0 || tau_entropy < 0.0 {
        return Err(Error::DegenerateTemperature(temperature));
    }
    check_shape("regularized_greedy baseline", baseline.probs().shape(), q.values.shape())?;
    let mut logits = &q.values / temperature;
    if lambda_kl > 0.0 {
        logits += baseline.log_probs() * (lambda_kl / temperature);
    }
    Ok(logits)
}

/// Maximizer of `⟨π, q⟩ − λ KL(π‖μ) + τ H(π)`, i.e. `π ∝ μ^{λ/(λ+τ)} exp(q/(λ+τ))`.
pub fn regularized_greedy(
    q: &QFunction,
    baseline: &Policy,
    lambda_kl: f64,
    tau_entropy: f64,
) -> Result<Policy> {
    let logits = greedy_logits(q, baseline, lambda_kl, tau_entropy)?;
    Policy::from_log_probs(log_softmax_rows(&logits))
}

/// Value of the regularized maximum, `(λ+τ) ln ⟨1, μ^{λ/(λ+τ)} exp(q/(λ+τ))⟩`.
pub fn regularized_maximum(
    q: &QFunction,
    baseline: &Policy,
    lambda_kl: f64,
    tau_entropy: f64,
) -> Result<ValueVector> {
    let logits = greedy_logits(q, baseline, lambda_kl, tau_entropy)?;
    let temperature = lambda_kl + tau_entropy;
    let values = DVector::from_iterator(
        logits.nrows(),
        logits.row_iter().map(|r| temperature * log_sum_exp(r.iter().copied())),
    );
    Ok(ValueVector::new(values))
}

/// The per-state objective `⟨π, q⟩ − λ KL(π‖μ) + τ H(π)`.
pub fn regularized_objective(
    pi: &Policy,
    q: &QFunction,
    baseline: &Policy,
    lambda_kl: f64,
    tau_entropy: f64,
) -> Result<ValueVector> {
    check_shape("regularized_objective", pi.probs().shape(), q.values.shape())?;
    let mut v = expectation(pi, &q.values);
    if lambda_kl != 0.0 {
        v -= kl_divergence(pi, baseline)?.values * lambda_kl;
    }
    if tau_entropy != 0.0 {
        v += entropy(pi).values * tau_entropy;
    }
    Ok(ValueVector::new(v))
}

/// One application of `T^{λ,τ}_{π|μ} q = r + γ P (⟨π, q⟩ − λ KL(π‖μ) + τ H(π))`.
pub fn regularized_bellman(
    q: &QFunction,
    pi: &Policy,
    baseline: &Policy,
    lambda_kl: f64,
    tau_entropy: f64,
    mdp: &TabularMdp,
) -> Result<QFunction> {
    check_shape(
        "regularized_bellman",
        q.values.shape(),
        (mdp.num_states(), mdp.num_actions()),
    )?;
    let v = regularized_objective(pi, q, baseline, lambda_kl, tau_entropy)?;
    Ok(QFunction::new(mdp.backup(&v.values)))
}

/// Unregularized evaluation operator `T_π q = r + γ P ⟨π, q⟩`.
pub fn bellman_evaluation(q: &QFunction, pi: &Policy, mdp: &TabularMdp) -> QFunction {
    QFunction::new(mdp.backup(&expectation(pi, &q.values)))
}

/// Bellman optimality operator `T q = r + γ P max_a q`.
pub fn bellman_optimality(q: &QFunction, mdp: &TabularMdp) -> QFunction {
    let v = DVector::from_iterator(q.values.nrows(), q.values.row_iter().map(|r| r.max()));
    QFunction::new(mdp.backup(&v))
}

/// Deterministic argmax, ties broken by the lowest action index.
pub fn argmax_actions(q: &QFunction) -> Vec<usize> {
    q.values
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for a in 1..row.len() {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

pub fn greedy_policy(q: &QFunction) -> Policy {
    Policy::deterministic(&argmax_actions(q), q.num_actions())
}

/// Clamps a log-policy table from below, used where `ln π` enters a reward.
pub fn clip_log_policy(log_probs: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    log_probs.map(|l| l.max(floor.max(LOG_FLOOR)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn policy(rows: &[&[f64]]) -> Policy {
        let na = rows[0].len();
        Policy::from_probs(DMatrix::from_fn(rows.len(), na, |s, a| rows[s][a])).unwrap()
    }

    fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Policy {
        let raw = DMatrix::from_fn(ns, na, |_, _| rng.random::<f64>() + 1e-3);
        let mut probs = raw.clone();
        for (mut row, r) in probs.row_iter_mut().zip(raw.row_iter()) {
            row.copy_from(&(r / r.sum()));
        }
        Policy::from_probs(probs).unwrap()
    }

    /// Uniform point on the simplex by normalized exponentials.
    fn simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let e: Vec<f64> = (0..n).map(|_| -(rng.random::<f64>().max(1e-300)).ln()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    fn objective_row(p: &[f64], q: &[f64], mu: &[f64], lambda: f64, tau: f64) -> f64 {
        p.iter()
            .zip(q)
            .zip(mu)
            .map(|((&p, &q), &m)| {
                if p == 0.0 {
                    0.0
                } else {
                    p * q - lambda * p * (p.ln() - m.ln()) - tau * p * p.ln()
                }
            })
            .sum()
    }

    #[test]
    fn kl_of_identical_policies_is_zero() {
        let p = policy(&[&[0.2, 0.3, 0.5], &[1.0, 0.0, 0.0]]);
        let kl = kl_divergence(&p, &p).unwrap();
        assert!(kl.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn kl_deterministic_vs_uniform_is_ln_a() {
        let p = Policy::deterministic(&[0, 0, 0], 4);
        let u = Policy::uniform(3, 4);
        for v in kl_divergence(&p, &u).unwrap().values.iter() {
            assert_relative_eq!(*v, 4f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn kl_two_actions_matches_direct_sum() {
        let p1 = policy(&[&[0.7, 0.3], &[0.7, 0.3]]);
        let p2 = policy(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let direct = [0.7, 0.3]
            .iter()
            .zip([0.5, 0.5])
            .map(|(a, b): (&f64, f64)| a * (a / b).ln())
            .sum::<f64>();
        let kl = kl_divergence(&p1, &p2).unwrap();
        for v in kl.values.iter() {
            assert_relative_eq!(*v, direct, epsilon = 1e-14);
            assert_relative_eq!(*v, 0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln(), epsilon = 1e-14);
        }
    }

    #[test]
    fn kl_rejects_missing_support() {
        let p1 = policy(&[&[0.5, 0.5]]);
        let p2 = policy(&[&[1.0, 0.0]]);
        assert!(matches!(
            kl_divergence(&p1, &p2),
            Err(Error::AbsoluteContinuityViolation { state: 0, action: 1, .. })
        ));
    }

    #[test]
    fn entropy_cases() {
        let det = Policy::deterministic(&[1, 0], 3);
        assert!(entropy(&det).values.iter().all(|&h| h == 0.0));
        let u = Policy::uniform(2, 4);
        for h in entropy(&u).values.iter() {
            assert_relative_eq!(*h, 4f64.ln(), epsilon = 1e-12);
        }
        let p = policy(&[&[0.9, 0.1]]);
        let direct = -0.9 * 0.9f64.ln() - 0.1 * 0.1f64.ln();
        assert_relative_eq!(entropy(&p).values[0], direct, epsilon = 1e-14);
        assert_relative_eq!(entropy(&p).values[0], 0.325083, epsilon = 1e-6);
    }

    #[test]
    fn greedy_of_zero_q_is_uniform() {
        let q = QFunction::zeros(3, 4);
        let u = Policy::uniform(3, 4);
        for (lambda, tau) in [(1.0, 0.0), (0.0, 2.0), (3.0, 0.5)] {
            let pi = regularized_greedy(&q, &u, lambda, tau).unwrap();
            assert!(pi.max_total_variation(&u) < 1e-15);
        }
    }

    #[test]
    fn greedy_boltzmann_closed_form() {
        let q = QFunction::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let pi = regularized_greedy(&q, &Policy::uniform(1, 2), 0.0, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(pi.probs()[(0, 0)], e / (e + 1.0), epsilon = 1e-15);
        assert_relative_eq!(pi.probs()[(0, 0)], 0.73106, epsilon = 1e-5);
        assert_relative_eq!(pi.probs()[(0, 1)], 0.26894, epsilon = 1e-5);
    }

    #[test]
    fn greedy_kl_only_matches_grid_search() {
        // λ = 2, τ = 0, μ = (0.5, 0.5), q = (1, 0): closed form ∝ (0.5 e^{0.5}, 0.5).
        let q = QFunction::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let mu = Policy::uniform(1, 2);
        let pi = regularized_greedy(&q, &mu, 2.0, 0.0).unwrap();
        let w = 0.5 * 0.5f64.exp();
        assert_relative_eq!(pi.probs()[(0, 0)], w / (w + 0.5), epsilon = 1e-15);

        let mut best = f64::NEG_INFINITY;
        let n = 200_000;
        for i in 0..=n {
            let p = i as f64 / n as f64;
            best = best.max(objective_row(&[p, 1.0 - p], &[1.0, 0.0], &[0.5, 0.5], 2.0, 0.0));
        }
        let at_greedy = objective_row(
            &[pi.probs()[(0, 0)], pi.probs()[(0, 1)]],
            &[1.0, 0.0],
            &[0.5, 0.5],
            2.0,
            0.0,
        );
        assert!((at_greedy - best).abs() <= 1e-6);
        assert!(at_greedy >= best - 1e-12);
    }

    #[test]
    fn greedy_rejects_zero_temperature() {
        let q = QFunction::zeros(1, 2);
        let u = Policy::uniform(1, 2);
        assert!(matches!(
            regularized_greedy(&q, &u, 0.0, 0.0),
            Err(Error::DegenerateTemperature(_))
        ));
        assert!(regularized_maximum(&q, &u, 0.0, 0.0).is_err());
    }

    #[test]
    fn maximum_of_constant_q() {
        let q = QFunction::new(DMatrix::from_element(2, 3, 2.5));
        let m = regularized_maximum(&q, &Policy::uniform(2, 3), 0.0, 1.0).unwrap();
        for v in m.values.iter() {
            assert_relative_eq!(*v, 2.5 + 3f64.ln(), epsilon = 1e-12);
        }
        // KL to a uniform baseline plus entropy with λ + τ = 1: ln⟨1, μ^λ⟩ = (1 − λ) ln|A|.
        let z = QFunction::zeros(2, 3);
        for lambda in [0.0, 0.25, 0.5, 0.75] {
            let m = regularized_maximum(&z, &Policy::uniform(2, 3), lambda, 1.0 - lambda).unwrap();
            for v in m.values.iter() {
                assert_relative_eq!(*v, (1.0 - lambda) * 3f64.ln(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn maximum_equals_objective_at_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = QFunction::new(DMatrix::from_fn(6, 4, |_, _| rng.random_range(-3.0..3.0)));
        let mu = Policy::uniform(6, 4);
        let pi = regularized_greedy(&q, &mu, 1.0, 0.0).unwrap();
        let max = regularized_maximum(&q, &mu, 1.0, 0.0).unwrap();
        let obj = regularized_objective(&pi, &q, &mu, 1.0, 0.0).unwrap();
        assert!((&max.values - &obj.values).amax() < 1e-9);
    }

    /// Greedy optimality against random simplex points, 1000 seeded instances.
    #[test]
    fn greedy_beats_random_simplex_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let na = rng.random_range(2..6);
            let ns = 2;
            let q = QFunction::new(DMatrix::from_fn(ns, na, |_, _| rng.random_range(-5.0..5.0)));
            let mu = random_policy(&mut rng, ns, na);
            let lambda = rng.random_range(0.0..3.0);
            let tau = rng.random_range(0.01..3.0);
            let pi = regularized_greedy(&q, &mu, lambda, tau).unwrap();
            let at_pi = regularized_objective(&pi, &q, &mu, lambda, tau).unwrap();
            let max = regularized_maximum(&q, &mu, lambda, tau).unwrap();
            for s in 0..ns {
                assert!((at_pi.values[s] - max.values[s]).abs() < 1e-9);
                let qs: Vec<f64> = q.values.row(s).iter().copied().collect();
                let ms: Vec<f64> = mu.probs().row(s).iter().copied().collect();
                for _ in 0..100 {
                    let p = simplex_point(&mut rng, na);
                    let obj = objective_row(&p, &qs, &ms, lambda, tau);
                    assert!(at_pi.values[s] >= obj - 1e-9);
                }
            }
        }
    }

    #[test]
    fn entropy_and_kl_ranges_on_random_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let na = rng.random_range(2..7);
            let p1 = random_policy(&mut rng, 4, na);
            let p2 = random_policy(&mut rng, 4, na);
            for h in entropy(&p1).values.iter() {
                assert!(*h >= 0.0 && *h <= (na as f64).ln() + 1e-12);
            }
            assert!(kl_divergence(&p1, &p2).unwrap().values.iter().all(|&k| k >= 0.0));
        }
    }

    #[test]
    fn log_softmax_handles_huge_logits() {
        let logits = DMatrix::from_row_slice(1, 3, &[1e6, 1e6 - 1.0, -1e6]);
        let lp = log_softmax_rows(&logits);
        assert!(lp.iter().all(|x| x.is_finite()));
        let pi = Policy::from_log_probs(lp).unwrap();
        assert_relative_eq!(pi.probs().row(0).sum(), 1.0, epsilon = 1e-12);
    }
}
