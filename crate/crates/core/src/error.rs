use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("absolute continuity violated at state {state}, action {action}: p1 = {p1:e} but p2 = 0")]
    AbsoluteContinuityViolation {
        state: usize,
        action: usize,
        p1: f64,
    },

    #[error("degenerate temperature: lambda + tau = {0} must be positive")]
    DegenerateTemperature(f64),

    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("goal unreachable after {attempts} layout attempts")]
    UnreachableGoal { attempts: usize },

    #[error("invalid action {action} (task has {action_count} actions)")]
    InvalidAction { action: usize, action_count: usize },

    #[error("schedule does not match trace: {0}")]
    MismatchedSchedule(String),

    #[error("non-finite value during training at step {step}: {what}")]
    NumericalDivergence { step: usize, what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt trace file {path}: {reason}")]
    CorruptTrace { path: PathBuf, reason: String },

    #[error("no traces found under {0}")]
    NoTraces(PathBuf),

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
