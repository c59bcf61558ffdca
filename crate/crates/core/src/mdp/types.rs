use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities at or below this value count as zero for support checks.
pub const PROB_FLOOR: f64 = 1e-12;

/// Smallest log-probability ever stored, `ln(1e-300)`.
pub const LOG_FLOOR: f64 = -690.775_527_898_213_7;

const STOCHASTIC_TOL: f64 = 1e-12;
const POLICY_TOL: f64 = 1e-10;

/// A finite discounted MDP.
///
/// The transition kernel is stored as an `(S·A) × S` matrix whose row
/// `s·A + a` is the next-state distribution of `(s, a)`, so that the
/// expectation `P v` is a single matrix-vector product.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: DMatrix<f64>,
    reward: DMatrix<f64>,
    gamma: f64,
    initial_dist: DVector<f64>,
}

impl TabularMdp {
    pub fn new(
        transition: DMatrix<f64>,
        reward: DMatrix<f64>,
        gamma: f64,
        initial_dist: DVector<f64>,
    ) -> Result<Self> {
        let num_states = reward.nrows();
        let num_actions = reward.ncols();
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action set".into()));
        }
        if transition.shape() != (num_states * num_actions, num_states) {
            return Err(Error::InvalidMdp(format!(
                "transition has shape {:?}, expected ({}, {})",
                transition.shape(),
                num_states * num_actions,
                num_states
            )));
        }
        if initial_dist.len() != num_states {
            return Err(Error::InvalidMdp(format!(
                "initial distribution has {} entries for {} states",
                initial_dist.len(),
                num_states
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("gamma = {gamma} outside (0, 1)")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("non-finite reward".into()));
        }
        for row in 0..transition.nrows() {
            let p = transition.row(row);
            if p.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidMdp(format!(
                    "negative transition probability for (s, a) = ({}, {})",
                    row / num_actions,
                    row % num_actions
                )));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMdp(format!(
                    "transition row for (s, a) = ({}, {}) sums to {sum}",
                    row / num_actions,
                    row % num_actions
                )));
            }
        }
        if initial_dist.iter().any(|&x| !(x >= 0.0))
            || (initial_dist.sum() - 1.0).abs() > STOCHASTIC_TOL
        {
            return Err(Error::InvalidMdp("initial distribution is not a probability vector".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            gamma,
            initial_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn initial_dist(&self) -> &DVector<f64> {
        &self.initial_dist
    }

    /// `P(next | state, action)`.
    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transition[(state * self.num_actions + action, next)]
    }

    pub fn r_max(&self) -> f64 {
        self.reward.amax()
    }

    /// `(P v)(s, a) = Σ_{s'} P(s'|s,a) v(s')`, returned as an `S × A` table.
    pub fn expect_next(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let flat = &self.transition * v;
        DMatrix::from_fn(self.num_states, self.num_actions, |s, a| {
            flat[s * self.num_actions + a]
        })
    }

    /// `r + γ P v`.
    pub fn backup(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut q = self.expect_next(v);
        q *= self.gamma;
        q += &self.reward;
        q
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MdpDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

/// On-disk JSON layout of a [`TabularMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    /// Indexed `[state][action][next_state]`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Indexed `[state][action]`.
    pub reward: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
}

impl From<&TabularMdp> for MdpDocument {
    fn from(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.num_states, mdp.num_actions);
        MdpDocument {
            num_states: ns,
            num_actions: na,
            gamma: mdp.gamma,
            transition: (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| (0..ns).map(|n| mdp.prob(s, a, n)).collect())
                        .collect()
                })
                .collect(),
            reward: (0..ns)
                .map(|s| (0..na).map(|a| mdp.reward[(s, a)]).collect())
                .collect(),
            initial_dist: mdp.initial_dist.iter().copied().collect(),
        }
    }
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let (ns, na) = (doc.num_states, doc.num_actions);
        let bad = |what: &str| Error::InvalidMdp(format!("{what} has the wrong shape"));
        if doc.transition.len() != ns || doc.reward.len() != ns {
            return Err(bad("transition or reward"));
        }
        let mut transition = DMatrix::zeros(ns * na, ns);
        let mut reward = DMatrix::zeros(ns, na);
        for s in 0..ns {
            if doc.transition[s].len() != na || doc.reward[s].len() != na {
                return Err(bad("transition or reward"));
            }
            for a in 0..na {
                reward[(s, a)] = doc.reward[s][a];
                let row = &doc.transition[s][a];
                if row.len() != ns {
                    return Err(bad("transition"));
                }
                for (n, &p) in row.iter().enumerate() {
                    transition[(s * na + a, n)] = p;
                }
            }
        }
        TabularMdp::new(
            transition,
            reward,
            doc.gamma,
            DVector::from_vec(doc.initial_dist),
        )
    }
}

/// A state-action value table, `S × A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    pub values: DMatrix<f64>,
}

impl QFunction {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self::new(DMatrix::zeros(num_states, num_actions))
    }

    pub fn num_states(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.values.ncols()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `‖self − other‖∞`.
    pub fn distance(&self, other: &QFunction) -> f64 {
        (&self.values - &other.values).amax()
    }
}

/// A per-state vector, e.g. `⟨π, q⟩`, `KL(π₁‖π₂)` or `H(π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    pub values: DVector<f64>,
}

impl ValueVector {
    pub fn new(values: DVector<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A stochastic policy with its log-probabilities kept alongside.
///
/// Policies produced by the regularized greedy step are built from
/// log-probabilities directly so that `ln π` never passes through `exp`/`ln`
/// round trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    probs: DMatrix<f64>,
    log_probs: DMatrix<f64>,
}

impl Policy {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            probs: DMatrix::from_element(num_states, num_actions, p),
            log_probs: DMatrix::from_element(num_states, num_actions, -(num_actions as f64).ln()),
        }
    }

    /// Validates rows and derives the log table (clamped at [`LOG_FLOOR`]).
    pub fn from_probs(probs: DMatrix<f64>) -> Result<Self> {
        for (s, row) in probs.row_iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!("negative or NaN entry in state {s}")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > POLICY_TOL {
                return Err(Error::InvalidPolicy(format!("state {s} sums to {sum}")));
            }
        }
        let log_probs = probs.map(|p| if p > 0.0 { p.ln().max(LOG_FLOOR) } else { LOG_FLOOR });
        Ok(Self { probs, log_probs })
    }

    /// Builds a policy from row-normalized log-probabilities.
    pub fn from_log_probs(log_probs: DMatrix<f64>) -> Result<Self> {
        let log_probs = log_probs.map(|l| l.max(LOG_FLOOR));
        let probs = log_probs.map(f64::exp);
        for (s, row) in probs.row_iter().enumerate() {
            let sum = row.sum();
            if !((sum - 1.0).abs() <= POLICY_TOL) {
                return Err(Error::InvalidPolicy(format!("state {s} sums to {sum}")));
            }
        }
        Ok(Self { probs, log_probs })
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let probs = DMatrix::from_fn(actions.len(), num_actions, |s, a| {
            if actions[s] == a {
                1.0
            } else {
                0.0
            }
        });
        Self::from_probs(probs).expect("one-hot rows are valid")
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn log_probs(&self) -> &DMatrix<f64> {
        &self.log_probs
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Largest per-state total-variation distance to `other`.
    pub fn max_total_variation(&self, other: &Policy) -> f64 {
        self.probs
            .row_iter()
            .zip(other.probs.row_iter())
            .map(|(a, b)| 0.5 * (a - b).abs().sum())
            .fold(0.0, f64::max)
    }
}
