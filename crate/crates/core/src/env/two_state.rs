use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::tabular::{ApplicationMode, ErrorModel};

/// Discount used by [`two_state_mdp`].
pub const TWO_STATE_GAMMA: f64 = 0.99;

/// The two-state picture of periodic shocks.
///
/// In state 0, action 0 loops with probability `(K−1)/K` at no cost and
/// otherwise moves to state 1 paying a cost uniform on `(0, K)`. Action 1
/// moves to state 1 directly and pays the same expected cost `K/2`. Both
/// actions in state 1 return to state 0 for free. Costs are negative rewards,
/// and the MDP carries only their expectation; the random part is delivered
/// by the returned periodic error model.
pub fn two_state_mdp(big_k: usize) -> Result<(TabularMdp, ErrorModel)> {
    two_state_mdp_with_gamma(big_k, TWO_STATE_GAMMA)
}

pub fn two_state_mdp_with_gamma(big_k: usize, gamma: f64) -> Result<(TabularMdp, ErrorModel)> {
    if big_k < 2 {
        return Err(Error::Config(format!("two-state MDP needs K >= 2, got {big_k}")));
    }
    let k = big_k as f64;
    let loop_p = (k - 1.0) / k;
    // Rows are (s, a) = (0,0), (0,1), (1,0), (1,1).
    let transition = DMatrix::from_row_slice(4, 2, &[loop_p, 1.0 - loop_p, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
    let half = k / 2.0;
    let reward = DMatrix::from_row_slice(2, 2, &[-(1.0 - loop_p) * half, -half, 0.0, 0.0]);
    let mdp = TabularMdp::new(transition, reward, gamma, DVector::from_vec(vec![1.0, 0.0]))?;
    let errors = ErrorModel::periodic_uniform(big_k).with_mode(ApplicationMode::ScalarBroadcast);
    Ok((mdp, errors))
}
