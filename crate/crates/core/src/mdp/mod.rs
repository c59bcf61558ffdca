//! Finite MDPs, policies, value tables and the regularized operators.

mod ops;
mod solve;
mod types;

pub use ops::{
    argmax_actions, bellman_evaluation, bellman_optimality, clip_log_policy, entropy, expectation,
    greedy_policy, kl_divergence, kl_divergence_logs, log_softmax_rows, log_sum_exp, regularized_bellman,
    regularized_greedy, regularized_maximum, regularized_objective,
};
pub use solve::{
    evaluate_policy_exact, evaluate_policy_iterative, evaluation_residual, optimality_gap,
    optimality_residual, solve_optimal, solve_optimal_with_cap, state_values, DEFAULT_VI_CAP,
};
pub use types::{MdpDocument, Policy, QFunction, TabularMdp, ValueVector, LOG_FLOOR, PROB_FLOOR};
