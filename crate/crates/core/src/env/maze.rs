//! Random grid mazes with slippery moves.
//!
//! Non-wall cells other than the goal become MDP states, followed by one
//! absorbing terminal state. Entering the goal pays `goal_reward` and moves
//! the agent into the terminal state. Episodes are otherwise infinite-horizon
//! and discounted; the `horizon` field only caps sampled rollouts.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Grid coordinates `(row, col)`.
pub type Cell = (usize, usize);

/// Up, right, down, left.
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MazeSpec {
    pub width: usize,
    pub height: usize,
    /// Fixed layout, row-major `[row][col]`; a random layout is drawn when absent.
    pub wall_mask: Option<Vec<Vec<bool>>>,
    pub wall_density: f64,
    pub start_cell: Cell,
    pub goal_cell: Cell,
    pub success_prob: f64,
    pub slip_prob: f64,
    pub goal_reward: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub rng_seed: u64,
    pub max_attempts: usize,
}

impl Default for MazeSpec {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            wall_mask: None,
            wall_density: 0.2,
            start_cell: (0, 0),
            goal_cell: (4, 4),
            success_prob: 0.9,
            slip_prob: 0.1,
            goal_reward: 1.0,
            horizon: 25,
            gamma: 0.99,
            rng_seed: 0,
            max_attempts: 1000,
        }
    }
}

impl MazeSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("maze must have positive width and height".into());
        }
        for (name, (r, c)) in [("start", self.start_cell), ("goal", self.goal_cell)] {
            if r >= self.height || c >= self.width {
                return bad(format!("{name} cell ({r}, {c}) outside the grid"));
            }
        }
        if self.start_cell == self.goal_cell {
            return bad("start and goal must differ".into());
        }
        if !(0.0..=1.0).contains(&self.success_prob) || !(0.0..=1.0).contains(&self.slip_prob) {
            return bad("move probabilities must lie in [0, 1]".into());
        }
        if (self.success_prob + self.slip_prob - 1.0).abs() > 1e-12 {
            return bad(format!(
                "success_prob + slip_prob = {} must equal 1",
                self.success_prob + self.slip_prob
            ));
        }
        if !(0.0..1.0).contains(&self.wall_density) {
            return bad(format!("wall density {} outside [0, 1)", self.wall_density));
        }
        if let Some(mask) = &self.wall_mask {
            if mask.len() != self.height || mask.iter().any(|r| r.len() != self.width) {
                return bad("wall mask does not match the grid size".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maze {
    pub spec: MazeSpec,
    /// Row-major `[row][col]`.
    pub walls: Vec<Vec<bool>>,
    /// MDP state index of each cell, `None` for walls and the goal.
    pub state_of_cell: Vec<Vec<Option<usize>>>,
    pub cell_of_state: Vec<Cell>,
    pub terminal_state: usize,
    #[serde(skip)]
    mdp: Option<TabularMdp>,
}

impl Maze {
    pub fn mdp(&self) -> &TabularMdp {
        self.mdp.as_ref().expect("maze built through generate_maze")
    }

    pub fn into_mdp(self) -> TabularMdp {
        self.mdp.expect("maze built through generate_maze")
    }

    pub fn start_state(&self) -> usize {
        let (r, c) = self.spec.start_cell;
        self.state_of_cell[r][c].expect("start is a floor cell")
    }

    /// `#` walls, `S` start, `G` goal, `.` floor.
    pub fn render_ascii(&self) -> String {
        let mut out = String::new();
        for r in 0..self.spec.height {
            for c in 0..self.spec.width {
                let ch = if (r, c) == self.spec.start_cell {
                    'S'
                } else if (r, c) == self.spec.goal_cell {
                    'G'
                } else if self.walls[r][c] {
                    '#'
                } else {
                    '.'
                };
                out.push(ch);
            }
            let _ = writeln!(out);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn connected(walls: &[Vec<bool>], start: Cell, goal: Cell) -> bool {
    let (h, w) = (walls.len(), walls[0].len());
    let mut seen = vec![vec![false; w]; h];
    let mut queue = VecDeque::from([start]);
    seen[start.0][start.1] = true;
    while let Some((r, c)) = queue.pop_front() {
        if (r, c) == goal {
            return true;
        }
        for (dr, dc) in MOVES {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if !walls[nr][nc] && !seen[nr][nc] {
                seen[nr][nc] = true;
                queue.push_back((nr, nc));
            }
        }
    }
    false
}

fn draw_walls(spec: &MazeSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    (0..spec.height)
        .map(|r| {
            (0..spec.width)
                .map(|c| {
                    // Draw for every cell so the stream does not depend on start/goal.
                    let wall = rng.random::<f64>() < spec.wall_density;
                    wall && (r, c) != spec.start_cell && (r, c) != spec.goal_cell
                })
                .collect()
        })
        .collect()
}

/// Builds the maze and its MDP, rejecting random layouts until the goal is
/// reachable from the start.
pub fn generate_maze(spec: &MazeSpec) -> Result<Maze> {
    spec.validate()?;
    let walls = match &spec.wall_mask {
        Some(mask) => {
            let mut mask = mask.clone();
            mask[spec.start_cell.0][spec.start_cell.1] = false;
            mask[spec.goal_cell.0][spec.goal_cell.1] = false;
            if !connected(&mask, spec.start_cell, spec.goal_cell) {
                return Err(Error::UnreachableGoal { attempts: 1 });
            }
            mask
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
            let mut found = None;
            for _ in 0..spec.max_attempts {
                let walls = draw_walls(spec, &mut rng);
                if connected(&walls, spec.start_cell, spec.goal_cell) {
                    found = Some(walls);
                    break;
                }
            }
            found.ok_or(Error::UnreachableGoal {
                attempts: spec.max_attempts,
            })?
        }
    };

    let mut state_of_cell = vec![vec![None; spec.width]; spec.height];
    let mut cell_of_state = Vec::new();
    for r in 0..spec.height {
        for c in 0..spec.width {
            if !walls[r][c] && (r, c) != spec.goal_cell {
                state_of_cell[r][c] = Some(cell_of_state.len());
                cell_of_state.push((r, c));
            }
        }
    }
    let terminal = cell_of_state.len();
    let ns = terminal + 1;
    let na = MOVES.len();

    let mut transition = DMatrix::zeros(ns * na, ns);
    let mut reward = DMatrix::zeros(ns, na);
    let target = |(r, c): Cell, dir: usize| -> Cell {
        let (dr, dc) = MOVES[dir];
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= spec.height as isize || nc >= spec.width as isize {
            return (r, c);
        }
        let (nr, nc) = (nr as usize, nc as usize);
        if walls[nr][nc] {
            (r, c)
        } else {
            (nr, nc)
        }
    };
    for (s, &cell) in cell_of_state.iter().enumerate() {
        for a in 0..na {
            for dir in 0..na {
                let p = if dir == a {
                    spec.success_prob
                } else {
                    spec.slip_prob / (na - 1) as f64
                };
                if p == 0.0 {
                    continue;
                }
                let next_cell = target(cell, dir);
                let next = if next_cell == spec.goal_cell {
                    reward[(s, a)] += p * spec.goal_reward;
                    terminal
                } else {
                    state_of_cell[next_cell.0][next_cell.1].expect("moves land on floor")
                };
                transition[(s * na + a, next)] += p;
            }
        }
    }
    for a in 0..na {
        transition[(terminal * na + a, terminal)] = 1.0;
    }
    let mut initial = DVector::zeros(ns);
    initial[state_of_cell[spec.start_cell.0][spec.start_cell.1].expect("start is floor")] = 1.0;
    let mdp = TabularMdp::new(transition, reward, spec.gamma, initial)?;

    Ok(Maze {
        spec: spec.clone(),
        walls,
        state_of_cell,
        cell_of_state,
        terminal_state: terminal,
        mdp: Some(mdp),
    })
}
