use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// A seeded random MDP: each `(s, a)` reaches a random subset of about half
/// the states with random weights, rewards are uniform in `[-1, 1]` and the
/// initial distribution is uniform.
pub fn random_mdp(num_states: usize, num_actions: usize, gamma: f64, seed: u64) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidMdp("empty state or action set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let branching = num_states.div_ceil(2).max(1);
    let mut transition = DMatrix::zeros(num_states * num_actions, num_states);
    for row in 0..num_states * num_actions {
        let next = rand::seq::index::sample(&mut rng, num_states, branching);
        let weights: Vec<f64> = (0..branching).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        for (n, w) in next.iter().zip(&weights) {
            transition[(row, n)] = w / total;
        }
        // Fold rounding residue into the largest entry so the row sums to 1.
        let residue = 1.0 - transition.row(row).sum();
        let imax = next.iter().zip(&weights).fold((0, 0.0), |best, (n, w)| if *w > best.1 { (n, *w) } else { best }).0;
        transition[(row, imax)] += residue;
    }
    let reward = DMatrix::from_fn(num_states, num_actions, |_, _| rng.random_range(-1.0..=1.0));
    let initial = DVector::from_element(num_states, 1.0 / num_states as f64);
    TabularMdp::new(transition, reward, gamma, initial)
}
