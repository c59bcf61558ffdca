use nalgebra::DMatrix;

use super::mlp::MlpParams;
use super::tracker::LambdaTracker;
use crate::env::EpisodeStep;
use crate::error::{Error, Result};
use crate::mdp::log_sum_exp;

/// A sampled minibatch laid out for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: DMatrix<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: DMatrix<f64>,
    pub terminal: Vec<bool>,
}

impl Batch {
    pub fn from_steps(steps: &[&EpisodeStep]) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::Config("empty batch".into()))?;
        let dim = first.observation.len();
        if steps
            .iter()
            .any(|s| s.observation.len() != dim || s.next_observation.len() != dim)
        {
            return Err(Error::ShapeMismatch("ragged observations in batch".into()));
        }
        let n = steps.len();
        Ok(Self {
            obs: DMatrix::from_fn(n, dim, |i, j| steps[i].observation[j]),
            actions: steps.iter().map(|s| s.action).collect(),
            rewards: steps.iter().map(|s| s.reward).collect(),
            next_obs: DMatrix::from_fn(n, dim, |i, j| steps[i].next_observation[j]),
            terminal: steps.iter().map(|s| s.terminal).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Log-softmax of every row of a q table.
pub fn log_policy(q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = q.clone();
    for mut row in out.row_iter_mut() {
        let lse = log_sum_exp(row.iter().copied());
        row.add_scalar_mut(-lse);
    }
    out
}

/// The λ-independent pieces of the regression target, so that a target can
/// be recombined after the coefficients move without another forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetParts {
    /// `max(ln π(a|s), clip)`.
    pub log_pi: Vec<f64>,
    pub rewards: Vec<f64>,
    /// `γ Σ_a′ π(a′|s′) (q(s′,a′) − ln π(a′|s′))`, zero after a true termination.
    pub bootstrap: Vec<f64>,
}

impl TargetParts {
    /// `q_obs` and `q_next` are the bootstrap network's outputs at `s` and `s′`.
    pub fn compute(
        batch: &Batch,
        q_obs: &DMatrix<f64>,
        q_next: &DMatrix<f64>,
        gamma: f64,
        log_clip: f64,
    ) -> Self {
        let lp_obs = log_policy(q_obs);
        let lp_next = log_policy(q_next);
        let log_pi = (0..batch.len())
            .map(|i| lp_obs[(i, batch.actions[i])].max(log_clip))
            .collect();
        let bootstrap = (0..batch.len())
            .map(|i| {
                if batch.terminal[i] {
                    return 0.0;
                }
                let soft: f64 = (0..q_next.ncols())
                    .map(|a| lp_next[(i, a)].exp() * (q_next[(i, a)] - lp_next[(i, a)]))
                    .sum();
                gamma * soft
            })
            .collect();
        Self {
            log_pi,
            rewards: batch.rewards.clone(),
            bootstrap,
        }
    }

    /// `y = ln π(a|s) + r/λ′ + (λ/λ′) · bootstrap`.
    pub fn combine(&self, lambda: f64, lambda_prime: f64) -> Vec<f64> {
        let attenuation = lambda / lambda_prime;
        self.log_pi
            .iter()
            .zip(&self.rewards)
            .zip(&self.bootstrap)
            .map(|((lp, r), b)| lp + r / lambda_prime + attenuation * b)
            .collect()
    }
}

/// Regression targets with `θ̄ = θ`.
pub fn dgvi_target(
    batch: &Batch,
    params: &MlpParams,
    tracker: &LambdaTracker,
    gamma: f64,
    log_clip: f64,
) -> Result<Vec<f64>> {
    let q_obs = params.forward(&batch.obs)?;
    let q_next = params.forward(&batch.next_obs)?;
    Ok(TargetParts::compute(batch, &q_obs, &q_next, gamma, log_clip)
        .combine(tracker.lambda, tracker.lambda_prime))
}

/// `max_i |q(s_i, a_i) − y_i|`.
pub fn td_max(q_obs: &DMatrix<f64>, actions: &[usize], targets: &[f64]) -> f64 {
    actions
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (&a, y))| (q_obs[(i, a)] - y).abs())
        .fold(0.0, f64::max)
}

pub fn batch_td_max(
    batch: &Batch,
    params: &MlpParams,
    tracker: &LambdaTracker,
    gamma: f64,
    log_clip: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let y = dgvi_target(batch, params, tracker, gamma, log_clip)?;
    Ok(td_max(&params.forward(&batch.obs)?, &batch.actions, &y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tracker(lambda: f64, lambda_prime: f64) -> LambdaTracker {
        LambdaTracker {
            lambda,
            lambda_prime,
            nu: 0.05,
            nu_slow: 0.005,
            alpha1: 2.0,
            alpha2: 0.9,
        }
    }

    fn random_batch(rng: &mut impl Rng, n: usize, dim: usize, actions: usize) -> Batch {
        Batch {
            obs: DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0)),
            actions: (0..n).map(|_| rng.random_range(0..actions)).collect(),
            rewards: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            next_obs: DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0)),
            terminal: (0..n).map(|_| rng.random_bool(0.2)).collect(),
        }
    }

    #[test]
    fn uniform_policy_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = Batch {
            terminal: vec![false; 6],
            ..random_batch(&mut rng, 6, 3, 2)
        };
        let params = MlpParams::zeros(&[3, 8, 2]);
        let gamma = 0.99;
        let y = dgvi_target(&batch, &params, &tracker(4.0, 4.0), gamma, -1.0).unwrap();
        let ln2 = 2f64.ln();
        for (yi, r) in y.iter().zip(&batch.rewards) {
            assert!((yi - (r / 4.0 + (gamma - 1.0) * ln2)).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_lambda_prime_drops_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = random_batch(&mut rng, 8, 4, 3);
        let params = MlpParams::new(&[4, 16, 3], &mut rng);
        let q = params.forward(&batch.obs).unwrap();
        let qn = params.forward(&batch.next_obs).unwrap();
        let parts = TargetParts::compute(&batch, &q, &qn, 0.99, -1.0);
        let y = parts.combine(10.0, 1e6);
        for i in 0..batch.len() {
            let without = parts.log_pi[i] + parts.rewards[i] / 1e6;
            // the bootstrap survives only with weight λ/λ′ = 1e-5
            assert!((y[i] - without).abs() <= 1.000001e-5 * parts.bootstrap[i].abs() + 1e-15);
        }
    }

    #[test]
    fn matches_straight_line_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (gamma, clip) = (0.97, -1.0);
        for _ in 0..20 {
            let batch = random_batch(&mut rng, 16, 4, 5);
            let params = MlpParams::new(&[4, 12, 12, 5], &mut rng);
            let tr = tracker(rng.random_range(0.5..20.0), rng.random_range(0.5..20.0));
            let y = dgvi_target(&batch, &params, &tr, gamma, clip).unwrap();
            for i in 0..batch.len() {
                let q = params.forward(&batch.obs.rows(i, 1).into_owned()).unwrap();
                let qn = params.forward(&batch.next_obs.rows(i, 1).into_owned()).unwrap();
                let z: f64 = q.iter().map(|v| v.exp()).sum();
                let lp = (q[(0, batch.actions[i])].exp() / z).ln().max(clip);
                let zn: f64 = qn.iter().map(|v| v.exp()).sum();
                let mut soft = 0.0;
                for a in 0..5 {
                    let p = qn[(0, a)].exp() / zn;
                    soft += p * (qn[(0, a)] - p.ln());
                }
                let boot = if batch.terminal[i] { 0.0 } else { soft };
                let expect = lp + batch.rewards[i] / tr.lambda_prime
                    + tr.lambda / tr.lambda_prime * gamma * boot;
                assert!((y[i] - expect).abs() < 1e-12, "{} vs {}", y[i], expect);
            }
        }
    }

    #[test]
    fn td_max_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = random_batch(&mut rng, 10, 4, 3);
        let params = MlpParams::new(&[4, 8, 3], &mut rng);
        let tr = tracker(3.0, 5.0);
        let y = dgvi_target(&batch, &params, &tr, 0.99, -1.0).unwrap();
        let q = params.forward(&batch.obs).unwrap();
        let brute = (0..10)
            .map(|i| (q[(i, batch.actions[i])] - y[i]).abs())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(batch_td_max(&batch, &params, &tr, 0.99, -1.0).unwrap(), brute);
        assert_eq!(td_max(&q, &batch.actions, &(0..10).map(|i| q[(i, batch.actions[i])]).collect::<Vec<_>>()), 0.0);

        let one = Batch {
            obs: batch.obs.rows(0, 1).into_owned(),
            actions: vec![batch.actions[0]],
            rewards: vec![batch.rewards[0]],
            next_obs: batch.next_obs.rows(0, 1).into_owned(),
            terminal: vec![batch.terminal[0]],
        };
        let single = batch_td_max(&one, &params, &tr, 0.99, -1.0).unwrap();
        assert!((single - (q[(0, batch.actions[0])] - y[0]).abs()).abs() < 1e-12);
    }
}
