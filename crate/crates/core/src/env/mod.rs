//! Test problems: random mazes, the two-state MDP, random MDPs and the
//! classic control tasks used by the deep agents.

mod control;
mod maze;
mod random;
mod two_state;

pub use control::{
    observe, reset, reset_state, step, CartPolePhysics, ControlEnv, ControlState, ControlTask,
    EpisodeStep, PendulumPhysics, Physics, TaskId,
};
pub use maze::{generate_maze, Cell, Maze, MazeSpec};
pub use random::random_mdp;
pub use two_state::{two_state_mdp, two_state_mdp_with_gamma, TWO_STATE_GAMMA};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::error::Result;
use crate::mdp::{Policy, TabularMdp};

/// Mean undiscounted return of `episodes` rollouts of `pi`, each cut at
/// `horizon` steps.
pub fn sampled_return(
    mdp: &TabularMdp,
    pi: &Policy,
    horizon: usize,
    episodes: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let ns = mdp.num_states();
    let start = WeightedIndex::new(mdp.initial_dist().iter().copied())
        .map_err(|e| crate::Error::InvalidMdp(e.to_string()))?;
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = start.sample(rng);
        for _ in 0..horizon {
            let a = WeightedIndex::new(pi.probs().row(s).iter().copied())
                .map_err(|e| crate::Error::InvalidPolicy(e.to_string()))?
                .sample(rng);
            total += mdp.reward()[(s, a)];
            let row = mdp.transition().row(s * mdp.num_actions() + a);
            s = WeightedIndex::new((0..ns).map(|n| row[n]))
                .map_err(|e| crate::Error::InvalidMdp(e.to_string()))?
                .sample(rng);
        }
    }
    Ok(total / episodes.max(1) as f64)
}
