use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::mlp::MlpParams;
use super::replay::ReplayBuffer;
use super::target::{log_policy, td_max, Batch, TargetParts};
use super::tracker::LambdaTracker;
use crate::env::{ControlEnv, ControlTask};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeepAlgorithm {
    /// Error-aware coefficients tracked from batch TD errors.
    Dgvi,
    /// Constant coefficient, `λ′ = λ = lambda_init` throughout.
    Mdqn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// Sample from `π ∝ exp(q)`.
    Softmax,
    EpsilonGreedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepConfig {
    pub algorithm: DeepAlgorithm,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub total_steps: usize,
    /// Transitions collected before the first gradient step.
    pub warmup_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub lambda_init: f64,
    pub lambda_prime_init: f64,
    pub nu: f64,
    pub nu_slow: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub log_clip: f64,
    pub exploration: Exploration,
    pub epsilon: f64,
    /// Polyak rate of a target network; `None` bootstraps from the online network.
    pub target_tau: Option<f64>,
    /// Multiplies every stored reward. Evaluation returns stay unscaled.
    pub reward_scale: f64,
}

impl Default for DeepConfig {
    fn default() -> Self {
        Self {
            algorithm: DeepAlgorithm::Dgvi,
            hidden: vec![256, 256],
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            gamma: 0.99,
            batch_size: 32,
            buffer_capacity: 50_000,
            total_steps: 50_000,
            warmup_steps: 1_000,
            eval_every: 300,
            eval_episodes: 10,
            lambda_init: 10.0,
            lambda_prime_init: 10.0,
            nu: 0.05,
            nu_slow: 0.005,
            alpha1: 0.5,
            alpha2: 0.995,
            log_clip: -1.0,
            exploration: Exploration::Softmax,
            epsilon: 0.1,
            target_tau: None,
            reward_scale: 1.0,
        }
    }
}

impl DeepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.batch_size == 0 || self.total_steps == 0 || self.eval_every == 0 {
            return bad("batch_size, total_steps and eval_every must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return bad(format!(
                "buffer_capacity {} is smaller than batch_size {}",
                self.buffer_capacity, self.batch_size
            ));
        }
        if !(self.lambda_init > 0.0 && self.lambda_prime_init > 0.0) {
            return bad("initial coefficients must be positive".into());
        }
        for (name, v) in [("nu", self.nu), ("nu_slow", self.nu_slow)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if !(self.alpha1 >= 0.0) || !(self.alpha2 > 0.0 && self.alpha2 <= 1.0) {
            return bad(format!(
                "need alpha1 >= 0 and alpha2 in (0, 1], got {} and {}",
                self.alpha1, self.alpha2
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.log_clip <= 0.0) {
            return bad("learning_rate must be positive and log_clip nonpositive".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if let Some(tau) = self.target_tau {
            if !(tau > 0.0 && tau <= 1.0) {
                return bad(format!("target_tau must lie in (0, 1], got {tau}"));
            }
        }
        if !self.reward_scale.is_finite() {
            return bad("reward_scale must be finite".into());
        }
        Ok(())
    }
}

/// One evaluation point of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
    /// Mean of the batch TD-error maxima since the previous row, in the
    /// units of the regression target.
    pub td_max: f64,
    /// The same errors multiplied by λ′, i.e. in reward units.
    pub td_max_reward: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    /// Mean batch TD-error max over every gradient step of the run.
    pub td_max_mean: f64,
    pub td_max_reward_mean: f64,
    pub gradient_steps: usize,
    /// Undiscounted returns of completed training episodes.
    pub episode_returns: Vec<f64>,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Window {
    td_sum: f64,
    td_reward_sum: f64,
    loss_sum: f64,
    count: usize,
}

/// The complete state of a training run. Serializing it and resuming
/// reproduces the rest of the run exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    config: DeepConfig,
    task: ControlTask,
    params: MlpParams,
    target: Option<MlpParams>,
    adam: AdamState,
    tracker: LambdaTracker,
    replay: ReplayBuffer,
    env: ControlEnv,
    env_rng: ChaCha8Rng,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    step: usize,
    episode_return: f64,
    window: Window,
    td_total: f64,
    td_reward_total: f64,
    log: TrainingLog,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    trainer: Trainer,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = a;
        }
    }
    best
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Trainer {
    pub fn new(task: ControlTask, config: DeepConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init_rng = stream(seed, 0);
        let mut sizes = vec![task.observation_dim];
        sizes.extend(&config.hidden);
        sizes.push(task.action_count);
        let params = MlpParams::new(&sizes, &mut init_rng);
        let target = config.target_tau.map(|_| params.clone());
        let adam = AdamState::new(
            &params,
            config.learning_rate,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_epsilon,
        );
        let (lambda, lambda_prime) = match config.algorithm {
            DeepAlgorithm::Dgvi => (config.lambda_init, config.lambda_prime_init),
            DeepAlgorithm::Mdqn => (config.lambda_init, config.lambda_init),
        };
        let tracker = LambdaTracker {
            lambda,
            lambda_prime,
            nu: config.nu,
            nu_slow: config.nu_slow,
            alpha1: config.alpha1,
            alpha2: config.alpha2,
        };
        let mut env_rng = stream(seed, 1);
        let env = ControlEnv::new(task.clone(), &mut env_rng);
        Ok(Self {
            replay: ReplayBuffer::new(config.buffer_capacity)?,
            config,
            task,
            params,
            target,
            adam,
            tracker,
            env,
            env_rng,
            explore_rng: stream(seed, 2),
            replay_rng: stream(seed, 3),
            eval_rng: stream(seed, 4),
            step: 0,
            episode_return: 0.0,
            window: Window::default(),
            td_total: 0.0,
            td_reward_total: 0.0,
            log: TrainingLog::default(),
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn tracker(&self) -> &LambdaTracker {
        &self.tracker
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn config(&self) -> &DeepConfig {
        &self.config
    }

    fn q_row(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.params.forward_one(obs)?.iter().copied().collect())
    }

    fn act(&mut self, obs: &[f64]) -> Result<usize> {
        let q = self.q_row(obs)?;
        Ok(match self.config.exploration {
            Exploration::Softmax => {
                let lp = log_policy(&DMatrix::from_row_slice(1, q.len(), &q));
                let u: f64 = self.explore_rng.random();
                let mut acc = 0.0;
                let mut chosen = q.len() - 1;
                for a in 0..q.len() {
                    acc += lp[(0, a)].exp();
                    if u < acc {
                        chosen = a;
                        break;
                    }
                }
                chosen
            }
            Exploration::EpsilonGreedy => {
                if self.explore_rng.random::<f64>() < self.config.epsilon {
                    self.explore_rng.random_range(0..q.len())
                } else {
                    argmax(&q)
                }
            }
        })
    }

    fn gradient_step(&mut self) -> Result<()> {
        let steps = self.replay.sample(self.config.batch_size, &mut self.replay_rng)?;
        let batch = Batch::from_steps(&steps)?;
        let cache = self.params.forward_cached(&batch.obs)?;
        let (q_obs_boot, q_next) = match &self.target {
            Some(t) => (t.forward(&batch.obs)?, t.forward(&batch.next_obs)?),
            None => (cache.output.clone(), self.params.forward(&batch.next_obs)?),
        };
        let parts = TargetParts::compute(
            &batch,
            &q_obs_boot,
            &q_next,
            self.config.gamma,
            self.config.log_clip,
        );

        let before = parts.combine(self.tracker.lambda, self.tracker.lambda_prime);
        let td = td_max(&cache.output, &batch.actions, &before);
        let td_reward = td * self.tracker.lambda_prime;
        if self.config.algorithm == DeepAlgorithm::Dgvi {
            self.tracker.update(td);
        }
        let y = parts.combine(self.tracker.lambda, self.tracker.lambda_prime);

        let n = batch.len() as f64;
        let mut grad = DMatrix::zeros(cache.output.nrows(), cache.output.ncols());
        let mut loss = 0.0;
        for (i, (&a, yi)) in batch.actions.iter().zip(&y).enumerate() {
            let diff = cache.output[(i, a)] - yi;
            loss += diff * diff / n;
            grad[(i, a)] = 2.0 * diff / n;
        }
        if !loss.is_finite() || !td.is_finite() {
            return Err(Error::NumericalDivergence {
                step: self.step,
                what: format!("loss {loss}, td_max {td}"),
            });
        }
        let grads = self.params.backward(&cache, &grad)?;
        self.adam.apply(&mut self.params, &grads);
        if !self.params.is_finite() {
            return Err(Error::NumericalDivergence {
                step: self.step,
                what: "network parameters".into(),
            });
        }
        if let (Some(t), Some(tau)) = (self.target.as_mut(), self.config.target_tau) {
            t.polyak_from(&self.params, tau);
        }

        self.window.td_sum += td;
        self.window.td_reward_sum += td_reward;
        self.window.loss_sum += loss;
        self.window.count += 1;
        self.td_total += td;
        self.td_reward_total += td_reward;
        self.log.gradient_steps += 1;
        Ok(())
    }

    /// Mean and population std of greedy returns over fresh episodes.
    pub fn evaluate(&mut self) -> Result<(f64, f64)> {
        let mut returns = Vec::with_capacity(self.config.eval_episodes);
        for _ in 0..self.config.eval_episodes {
            let mut env = ControlEnv::new(self.task.clone(), &mut self.eval_rng);
            let mut total = 0.0;
            loop {
                let a = argmax(&self.q_row(&env.observation())?);
                let t = env.step(a)?;
                total += t.reward;
                if t.done_flag {
                    break;
                }
            }
            returns.push(total);
        }
        if returns.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        Ok(mean_std(&returns))
    }

    /// One environment step, the gradient step it triggers and, on schedule,
    /// an evaluation.
    pub fn advance(&mut self) -> Result<()> {
        let obs = self.env.observation();
        let action = self.act(&obs)?;
        let mut transition = self.env.step(action)?;
        self.episode_return += transition.reward;
        transition.reward *= self.config.reward_scale;
        let done = transition.done_flag;
        self.replay.push(transition);
        if done {
            self.log.episode_returns.push(self.episode_return);
            self.episode_return = 0.0;
            self.env.reset(&mut self.env_rng);
        }
        self.step += 1;

        if self.replay.len() >= self.config.warmup_steps.max(self.config.batch_size) {
            self.gradient_step()?;
        }
        if self.step % self.config.eval_every == 0 {
            let (mean, std) = self.evaluate()?;
            let w = std::mem::take(&mut self.window);
            let per = |s: f64| if w.count == 0 { f64::NAN } else { s / w.count as f64 };
            self.log.rows.push(LogRow {
                step: self.step,
                eval_return_mean: mean,
                eval_return_std: std,
                lambda: self.tracker.lambda,
                lambda_prime: self.tracker.lambda_prime,
                td_max: per(w.td_sum),
                td_max_reward: per(w.td_reward_sum),
                loss: per(w.loss_sum),
            });
        }
        Ok(())
    }

    pub fn run_until(&mut self, step: usize) -> Result<()> {
        while self.step < step.min(self.config.total_steps) {
            self.advance()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<TrainingLog> {
        self.run_until(self.config.total_steps)?;
        let g = self.log.gradient_steps;
        let per = |s: f64| if g == 0 { f64::NAN } else { s / g as f64 };
        self.log.td_max_mean = per(self.td_total);
        self.log.td_max_reward_mean = per(self.td_reward_total);
        Ok(self.log)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(
            &mut w,
            &Checkpoint {
                version: CHECKPOINT_VERSION,
                trainer: self.clone(),
            },
        )?;
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            version: u32,
        }
        let text = std::fs::read_to_string(path)?;
        let header: Header = serde_json::from_str(&text)?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(header.version));
        }
        let cp: Checkpoint = serde_json::from_reader(BufReader::new(text.as_bytes()))?;
        cp.trainer.config.validate()?;
        Ok(cp.trainer)
    }
}

/// Trains with error-aware coefficients.
pub fn dgvi_train(task: &ControlTask, config: &DeepConfig, seed: u64) -> Result<TrainingLog> {
    let config = DeepConfig {
        algorithm: DeepAlgorithm::Dgvi,
        ..config.clone()
    };
    Trainer::new(task.clone(), config, seed)?.finish()
}

/// Trains the constant-coefficient baseline with `λ = config.lambda_init`.
pub fn mdqn_train(task: &ControlTask, config: &DeepConfig, seed: u64) -> Result<TrainingLog> {
    let config = DeepConfig {
        algorithm: DeepAlgorithm::Mdqn,
        ..config.clone()
    };
    Trainer::new(task.clone(), config, seed)?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DeepConfig {
        DeepConfig {
            hidden: vec![16, 16],
            total_steps: 600,
            warmup_steps: 64,
            eval_every: 200,
            eval_episodes: 2,
            buffer_capacity: 1000,
            ..DeepConfig::default()
        }
    }

    #[test]
    fn validation() {
        assert!(DeepConfig::default().validate().is_ok());
        for bad in [
            DeepConfig { gamma: 1.0, ..small() },
            DeepConfig { batch_size: 0, ..small() },
            DeepConfig { nu: 0.0, ..small() },
            DeepConfig { alpha2: 1.5, ..small() },
            DeepConfig { buffer_capacity: 8, ..small() },
            DeepConfig { target_tau: Some(0.0), ..small() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let task = ControlTask::cartpole();
        let a = dgvi_train(&task, &small(), 3).unwrap();
        let b = dgvi_train(&task, &small(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 3);
        assert!(a.gradient_steps > 0);
        let c = dgvi_train(&task, &small(), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mdqn_keeps_coefficients_fixed() {
        let log = mdqn_train(&ControlTask::discrete_pendulum(), &small(), 0).unwrap();
        assert!(log.rows.iter().all(|r| r.lambda == 10.0 && r.lambda_prime == 10.0));
    }

    #[test]
    fn target_network_variant_runs() {
        let cfg = DeepConfig {
            target_tau: Some(0.01),
            exploration: Exploration::EpsilonGreedy,
            ..small()
        };
        let log = dgvi_train(&ControlTask::cartpole(), &cfg, 1).unwrap();
        assert!(log.rows.iter().all(|r| r.td_max.is_finite()));
    }
}
