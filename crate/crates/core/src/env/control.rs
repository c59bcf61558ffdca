//! Classic control tasks with the standard public dynamics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Cartpole,
    DiscretePendulum,
}

impl std::str::FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(Self::Cartpole),
            "discrete_pendulum" | "pendulum" => Ok(Self::DiscretePendulum),
            other => Err(Error::Config(format!(
                "unknown task id '{other}' (expected cartpole or discrete_pendulum)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartPolePhysics {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
}

impl Default for CartPolePhysics {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            theta_threshold: 12.0 * 2.0 * PI / 360.0,
            x_threshold: 2.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendulumPhysics {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
}

impl Default for PendulumPhysics {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Physics {
    CartPole(CartPolePhysics),
    Pendulum(PendulumPhysics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTask {
    pub task_id: TaskId,
    pub physics: Physics,
    pub action_count: usize,
    pub episode_cap: usize,
    pub observation_dim: usize,
}

impl ControlTask {
    pub fn cartpole() -> Self {
        Self {
            task_id: TaskId::Cartpole,
            physics: Physics::CartPole(CartPolePhysics::default()),
            action_count: 2,
            episode_cap: 500,
            observation_dim: 4,
        }
    }

    /// Pendulum swing-up with torques evenly spread over `[-max, max]`.
    pub fn discrete_pendulum() -> Self {
        Self {
            task_id: TaskId::DiscretePendulum,
            physics: Physics::Pendulum(PendulumPhysics::default()),
            action_count: 5,
            episode_cap: 200,
            observation_dim: 3,
        }
    }

    pub fn from_id(id: TaskId) -> Self {
        match id {
            TaskId::Cartpole => Self::cartpole(),
            TaskId::DiscretePendulum => Self::discrete_pendulum(),
        }
    }

    /// Torque applied by a pendulum action.
    pub fn torque(&self, action: usize) -> f64 {
        match &self.physics {
            Physics::Pendulum(p) => {
                let span = 2.0 * p.max_torque / (self.action_count - 1) as f64;
                -p.max_torque + span * action as f64
            }
            Physics::CartPole(_) => 0.0,
        }
    }
}

/// Full simulator state, including the step counter used for the episode cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    /// Cart-pole: `[x, ẋ, θ, θ̇]`; pendulum: `[θ, θ̇]` with θ = 0 upright.
    pub physical: Vec<f64>,
    pub elapsed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    /// Set at termination or when the episode cap is reached.
    pub done_flag: bool,
    /// True termination (pole fell); bootstrapping stops only here.
    pub terminal: bool,
}

fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

pub fn observe(task: &ControlTask, state: &ControlState) -> Vec<f64> {
    match task.physics {
        Physics::CartPole(_) => state.physical.clone(),
        Physics::Pendulum(_) => {
            let (th, thdot) = (state.physical[0], state.physical[1]);
            vec![th.cos(), th.sin(), thdot]
        }
    }
}

/// Draws an initial state from the task's standard distribution.
pub fn reset_state(task: &ControlTask, rng: &mut impl Rng) -> ControlState {
    let physical = match task.physics {
        Physics::CartPole(_) => (0..4).map(|_| rng.random_range(-0.05..0.05)).collect(),
        Physics::Pendulum(_) => vec![rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)],
    };
    ControlState {
        physical,
        elapsed: 0,
    }
}

/// Seeded reset returning the state and its observation.
pub fn reset(task: &ControlTask, seed: u64) -> (ControlState, Vec<f64>) {
    let state = reset_state(task, &mut ChaCha8Rng::seed_from_u64(seed));
    let obs = observe(task, &state);
    (state, obs)
}

/// Advances one timestep. Pure in `(task, state, action)`.
pub fn step(task: &ControlTask, state: &ControlState, action: usize) -> Result<(ControlState, EpisodeStep)> {
    if action >= task.action_count {
        return Err(Error::InvalidAction {
            action,
            action_count: task.action_count,
        });
    }
    let observation = observe(task, state);
    let (physical, reward, terminal) = match &task.physics {
        Physics::CartPole(p) => {
            let [x, x_dot, theta, theta_dot] = [
                state.physical[0],
                state.physical[1],
                state.physical[2],
                state.physical[3],
            ];
            let force = if action == 1 { p.force_mag } else { -p.force_mag };
            let total_mass = p.cart_mass + p.pole_mass;
            let pml = p.pole_mass * p.half_length;
            let (sin, cos) = theta.sin_cos();
            let temp = (force + pml * theta_dot * theta_dot * sin) / total_mass;
            let theta_acc = (p.gravity * sin - cos * temp)
                / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
            let x_acc = temp - pml * theta_acc * cos / total_mass;
            let next = vec![
                x + p.tau * x_dot,
                x_dot + p.tau * x_acc,
                theta + p.tau * theta_dot,
                theta_dot + p.tau * theta_acc,
            ];
            let terminal = next[0].abs() > p.x_threshold || next[2].abs() > p.theta_threshold;
            (next, 1.0, terminal)
        }
        Physics::Pendulum(p) => {
            let (th, thdot) = (state.physical[0], state.physical[1]);
            let u = task.torque(action).clamp(-p.max_torque, p.max_torque);
            let cost = angle_normalize(th).powi(2) + 0.1 * thdot * thdot + 0.001 * u * u;
            let ml2 = p.mass * p.length * p.length;
            let new_thdot = thdot
                + (-3.0 * p.gravity / (2.0 * p.length) * (th + PI).sin() + 3.0 / ml2 * u) * p.dt;
            let new_th = th + new_thdot * p.dt;
            let new_thdot = new_thdot.clamp(-p.max_speed, p.max_speed);
            (vec![new_th, new_thdot], -cost, false)
        }
    };
    let next = ControlState {
        physical,
        elapsed: state.elapsed + 1,
    };
    let next_observation = observe(task, &next);
    let done_flag = terminal || next.elapsed >= task.episode_cap;
    Ok((
        next,
        EpisodeStep {
            observation,
            action,
            reward,
            next_observation,
            done_flag,
            terminal,
        },
    ))
}

/// A task instance with its own episode state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlEnv {
    pub task: ControlTask,
    pub state: ControlState,
}

impl ControlEnv {
    pub fn new(task: ControlTask, rng: &mut impl Rng) -> Self {
        let state = reset_state(&task, rng);
        Self { task, state }
    }

    pub fn observation(&self) -> Vec<f64> {
        observe(&self.task, &self.state)
    }

    pub fn reset(&mut self, rng: &mut impl Rng) -> Vec<f64> {
        self.state = reset_state(&self.task, rng);
        self.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<EpisodeStep> {
        let (next, record) = step(&self.task, &self.state, action)?;
        self.state = next;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartpole_reset_band_and_determinism() {
        let task = ControlTask::cartpole();
        for seed in 0..200 {
            let (_, obs) = reset(&task, seed);
            assert_eq!(obs.len(), 4);
            assert!(obs.iter().all(|v| v.abs() <= 0.05));
        }
        assert_eq!(reset(&task, 9), reset(&task, 9));
    }

    #[test]
    fn pendulum_reset_angle_domain() {
        let task = ControlTask::discrete_pendulum();
        for seed in 0..200 {
            let (state, obs) = reset(&task, seed);
            assert!((-PI..=PI).contains(&state.physical[0]));
            assert!((obs[0].powi(2) + obs[1].powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pendulum_torques_span_range() {
        let task = ControlTask::discrete_pendulum();
        let torques: Vec<f64> = (0..5).map(|a| task.torque(a)).collect();
        assert_eq!(torques, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn cartpole_alternating_survives() {
        let task = ControlTask::cartpole();
        let mut state = ControlState {
            physical: vec![0.0; 4],
            elapsed: 0,
        };
        let mut steps = 0;
        for t in 0..500 {
            let (next, rec) = step(&task, &state, t % 2).unwrap();
            assert_eq!(rec.reward, 1.0);
            state = next;
            steps += 1;
            if rec.done_flag {
                break;
            }
        }
        assert!(steps > 20);
    }

    #[test]
    fn cartpole_terminates_past_threshold() {
        let task = ControlTask::cartpole();
        let state = ControlState {
            physical: vec![0.0, 0.0, 0.25, 0.0],
            elapsed: 0,
        };
        let (_, rec) = step(&task, &state, 0).unwrap();
        assert!(rec.done_flag && rec.terminal);
    }

    #[test]
    fn cartpole_cap_truncates_without_termination() {
        let task = ControlTask::cartpole();
        let state = ControlState {
            physical: vec![0.0; 4],
            elapsed: task.episode_cap - 1,
        };
        let (_, rec) = step(&task, &state, 1).unwrap();
        assert!(rec.done_flag && !rec.terminal);
    }

    #[test]
    fn pendulum_bottom_cost() {
        let task = ControlTask::discrete_pendulum();
        let state = ControlState {
            physical: vec![PI, 0.0],
            elapsed: 0,
        };
        let (_, rec) = step(&task, &state, 2).unwrap();
        assert!((rec.reward + PI * PI).abs() < 1e-9);
    }

    #[test]
    fn pendulum_zero_torque_energy_drift_is_small() {
        let task = ControlTask::discrete_pendulum();
        let Physics::Pendulum(p) = &task.physics else { unreachable!() };
        // Uniform rod about its pivot: inertia m l²/3, centre of mass at l/2.
        let energy = |s: &[f64]| {
            p.mass * p.length * p.length / 6.0 * s[1] * s[1]
                + p.mass * p.gravity * p.length / 2.0 * s[0].cos()
        };
        // Drift measured against the full potential-energy swing m g l.
        let scale = p.mass * p.gravity * p.length;
        for start in [0.5, 2.0, 3.0] {
            let mut state = ControlState {
                physical: vec![start, 0.0],
                elapsed: 0,
            };
            let e0 = energy(&state.physical);
            for n in 1..=200 {
                state = step(&task, &state, 2).unwrap().0;
                let drift = (energy(&state.physical) - e0).abs() / n as f64;
                assert!(drift < 0.01 * scale, "start {start}, step {n}: drift {drift}");
            }
        }
    }

    #[test]
    fn invalid_action_rejected() {
        let task = ControlTask::cartpole();
        let (s, _) = reset(&task, 0);
        assert!(matches!(step(&task, &s, 2), Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn step_is_deterministic() {
        let task = ControlTask::discrete_pendulum();
        let (s, _) = reset(&task, 3);
        assert_eq!(step(&task, &s, 4).unwrap(), step(&task, &s, 4).unwrap());
    }
}
