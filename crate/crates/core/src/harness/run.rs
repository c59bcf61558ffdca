use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{EnvironmentSpec, ExperimentConfig};
use crate::bounds::{theorem2_report, write_reports, QMax};
use crate::deep::{Trainer, TrainingLog};
use crate::env::{generate_maze, MazeSpec, random_mdp, two_state_mdp_with_gamma, ControlTask, TWO_STATE_GAMMA};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::tabular::{run_scheme, IterationTrace, RunOptions};

/// The tabular problem for one run seed.
pub fn build_mdp(cfg: &ExperimentConfig, seed: u64) -> Result<TabularMdp> {
    match &cfg.environment {
        EnvironmentSpec::Maze { spec } => {
            let spec = if cfg.environment_per_seed {
                MazeSpec {
                    rng_seed: seed,
                    ..spec.clone()
                }
            } else {
                spec.clone()
            };
            Ok(generate_maze(&spec)?.into_mdp())
        }
        EnvironmentSpec::RandomMdp {
            num_states,
            num_actions,
            gamma,
            seed: fixed,
        } => random_mdp(
            *num_states,
            *num_actions,
            *gamma,
            if cfg.environment_per_seed { seed } else { *fixed },
        ),
        EnvironmentSpec::TwoState { period } => Ok(two_state_mdp_with_gamma(*period, TWO_STATE_GAMMA)?.0),
        EnvironmentSpec::Control { .. } => Err(Error::Config(
            "control tasks are run with run-deep".into(),
        )),
    }
}

/// One tabular run with bounds attached.
pub fn tabular_trace(cfg: &ExperimentConfig, seed: u64) -> Result<IterationTrace> {
    let scheme = cfg.scheme.tabular().ok_or_else(|| {
        Error::Config(format!("scheme `{}` is not tabular", cfg.scheme.name()))
    })?;
    let mdp = build_mdp(cfg, seed)?;
    let mut opts = RunOptions::new(cfg.iterations, seed);
    opts.with_bounds = true;
    let mut trace = run_scheme(&mdp, scheme, cfg.tabular_schedule()?, &cfg.errors, &opts)?;
    trace.label = cfg.scheme.name().to_string();
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabularAggregateRow {
    pub iter: usize,
    pub gap_mean: f64,
    pub gap_std: f64,
    pub lambda_mean: f64,
    pub bound_thm2_mean: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabularSummary {
    pub label: String,
    pub seeds: usize,
    pub final_gap_mean: f64,
    pub min_gap_mean: f64,
    /// First iteration where the mean gap drops below 1e-3, 0 if never.
    pub first_below_1e3: usize,
    pub bound_violations: usize,
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and spread of the gap across seeds at every iteration.
pub fn aggregate_traces(traces: &[IterationTrace]) -> Vec<TabularAggregateRow> {
    let n = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    (0..n)
        .map(|i| {
            let gaps: Vec<f64> = traces.iter().map(|t| t.records[i].gap).collect();
            let (gap_mean, gap_std) = mean_std(&gaps);
            let lambdas: Vec<f64> = traces.iter().map(|t| t.records[i].lambda).collect();
            let bounds: Vec<f64> = traces
                .iter()
                .map(|t| t.records[i].bound_thm2.unwrap_or(f64::NAN))
                .collect();
            TabularAggregateRow {
                iter: traces[0].records[i].iter,
                gap_mean,
                gap_std,
                lambda_mean: mean_std(&lambdas).0,
                bound_thm2_mean: mean_std(&bounds).0,
                runs: traces.len(),
            }
        })
        .collect()
}

fn prepare_out(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join("config.toml"))
}

/// Runs every variant for every seed and writes per-seed traces, bound
/// reports, per-variant aggregates and a summary under `out`.
pub fn run_tabular(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TabularSummary>> {
    cfg.validate()?;
    if cfg.scheme.is_deep() {
        return Err(Error::Config(format!(
            "scheme `{}` is deep; use run-deep",
            cfg.scheme.name()
        )));
    }
    prepare_out(cfg, out)?;
    let mut summaries = Vec::new();
    for (label, variant) in cfg.expand()? {
        let dir = out.join(&label);
        std::fs::create_dir_all(&dir)?;
        let traces: Vec<IterationTrace> = variant
            .seeds
            .par_iter()
            .map(|&seed| tabular_trace(&variant, seed))
            .collect::<Result<_>>()?;
        let mut violations = 0;
        for (seed, trace) in variant.seeds.iter().zip(&traces) {
            trace.save_csv(&dir.join(format!("seed_{seed}.csv")))?;
            let reports = theorem2_report(trace, QMax::Running)?;
            violations += reports.iter().filter(|r| !r.satisfied).count();
            write_reports(&reports, BufWriter::new(File::create(dir.join(format!("bounds_seed_{seed}.csv")))?))?;
        }
        let agg = aggregate_traces(&traces);
        write_csv(&dir.join("aggregate.csv"), &agg)?;
        summaries.push(TabularSummary {
            label,
            seeds: traces.len(),
            final_gap_mean: agg.last().map_or(f64::NAN, |r| r.gap_mean),
            min_gap_mean: agg.iter().map(|r| r.gap_mean).fold(f64::INFINITY, f64::min),
            first_below_1e3: agg.iter().find(|r| r.gap_mean < 1e-3).map_or(0, |r| r.iter),
            bound_violations: violations,
        });
    }
    write_csv(&out.join("summary.csv"), &summaries)?;
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeepAggregateRow {
    pub step: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub td_max_mean: f64,
    pub td_max_reward_mean: f64,
    pub lambda_mean: f64,
    pub lambda_prime_mean: f64,
    pub loss_mean: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeepSummary {
    pub label: String,
    pub seeds: usize,
    /// Across-seed std of the evaluation return, averaged over the final
    /// third of the evaluation points.
    pub final_third_seed_std: f64,
    pub final_third_return_mean: f64,
    /// Seed mean of each run's mean batch TD-error max.
    pub td_max_mean: f64,
    /// The same in reward units.
    pub td_max_reward_mean: f64,
}

/// Per-step aggregate over seeds.
pub fn aggregate_logs(logs: &[TrainingLog]) -> Vec<DeepAggregateRow> {
    let n = logs.iter().map(|l| l.rows.len()).min().unwrap_or(0);
    (0..n)
        .map(|i| {
            let col = |f: &dyn Fn(&crate::deep::LogRow) -> f64| -> Vec<f64> {
                logs.iter().map(|l| f(&l.rows[i])).collect()
            };
            let (return_mean, return_std) = mean_std(&col(&|r| r.eval_return_mean));
            DeepAggregateRow {
                step: logs[0].rows[i].step,
                return_mean,
                return_std,
                td_max_mean: mean_std(&col(&|r| r.td_max)).0,
                td_max_reward_mean: mean_std(&col(&|r| r.td_max_reward)).0,
                lambda_mean: mean_std(&col(&|r| r.lambda)).0,
                lambda_prime_mean: mean_std(&col(&|r| r.lambda_prime)).0,
                loss_mean: mean_std(&col(&|r| r.loss)).0,
                runs: logs.len(),
            }
        })
        .collect()
}

/// `(mean across-seed std, mean return)` over the last third of evaluation points.
pub fn final_third_stats(logs: &[TrainingLog]) -> (f64, f64) {
    let agg = aggregate_logs(logs);
    let tail = &agg[agg.len() - agg.len() / 3..];
    if tail.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = tail.len() as f64;
    (
        tail.iter().map(|r| r.return_std).sum::<f64>() / n,
        tail.iter().map(|r| r.return_mean).sum::<f64>() / n,
    )
}

pub fn summarize_logs(label: &str, logs: &[TrainingLog]) -> DeepSummary {
    let (std, mean) = final_third_stats(logs);
    DeepSummary {
        label: label.to_string(),
        seeds: logs.len(),
        final_third_seed_std: std,
        final_third_return_mean: mean,
        td_max_mean: mean_std(&logs.iter().map(|l| l.td_max_mean).collect::<Vec<_>>()).0,
        td_max_reward_mean: mean_std(&logs.iter().map(|l| l.td_max_reward_mean).collect::<Vec<_>>()).0,
    }
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.ckpt.json"))
}

/// One deep training run. Checkpoints every `cfg.checkpoint_every` steps
/// into `dir`, and with `resume` continues from an existing checkpoint.
pub fn deep_run(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>, resume: bool) -> Result<TrainingLog> {
    let (task, deep) = deep_setup(cfg)?;
    let ckpt = dir.map(|d| checkpoint_path(d, seed));
    let mut trainer = match &ckpt {
        Some(p) if resume && p.exists() => Trainer::load_checkpoint(p)?,
        _ => Trainer::new(task, deep, seed)?,
    };
    if let (Some(p), every) = (&ckpt, cfg.checkpoint_every) {
        if every > 0 {
            let total = trainer.config().total_steps;
            while trainer.step() < total {
                let next = (trainer.step() / every + 1) * every;
                trainer.run_until(next)?;
                trainer.save_checkpoint(p)?;
            }
        }
    }
    trainer.finish()
}

fn deep_setup(cfg: &ExperimentConfig) -> Result<(ControlTask, crate::deep::DeepConfig)> {
    let algorithm = cfg.scheme.algorithm().ok_or_else(|| {
        Error::Config(format!("scheme `{}` is not deep", cfg.scheme.name()))
    })?;
    let task = match &cfg.environment {
        EnvironmentSpec::Control { task } => ControlTask::from_id(*task),
        _ => return Err(Error::Config("deep schemes need a control environment".into())),
    };
    let mut deep = cfg.deep.clone();
    deep.algorithm = algorithm;
    Ok((task, deep))
}

/// Trains every variant for every seed and writes per-seed logs, aggregates
/// and a summary under `out`.
pub fn run_deep(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<Vec<DeepSummary>> {
    cfg.validate()?;
    if !cfg.scheme.is_deep() {
        return Err(Error::Config(format!(
            "scheme `{}` is tabular; use run-tabular",
            cfg.scheme.name()
        )));
    }
    prepare_out(cfg, out)?;
    let mut summaries = Vec::new();
    for (label, variant) in cfg.expand()? {
        let dir = out.join(&label);
        std::fs::create_dir_all(&dir)?;
        let logs: Vec<TrainingLog> = variant
            .seeds
            .par_iter()
            .map(|&seed| deep_run(&variant, seed, Some(&dir), resume))
            .collect::<Result<_>>()?;
        for (seed, log) in variant.seeds.iter().zip(&logs) {
            log.save_csv(&dir.join(format!("seed_{seed}.csv")))?;
        }
        write_csv(&dir.join("aggregate.csv"), &aggregate_logs(&logs))?;
        summaries.push(summarize_logs(&label, &logs));
    }
    write_csv(&out.join("summary.csv"), &summaries)?;
    Ok(summaries)
}

/// Writes a maze's JSON description and ASCII picture into `out`.
pub fn gen_maze(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<String> {
    let spec = match &cfg.environment {
        EnvironmentSpec::Maze { spec } => MazeSpec {
                    rng_seed: seed,
                    ..spec.clone()
                },
        _ => return Err(Error::Config("gen-maze needs a maze environment".into())),
    };
    let maze = generate_maze(&spec)?;
    std::fs::create_dir_all(out)?;
    let picture = maze.render_ascii();
    std::fs::write(out.join(format!("maze_{seed}.json")), maze.to_json()?)?;
    let mut f = File::create(out.join(format!("maze_{seed}.txt")))?;
    f.write_all(picture.as_bytes())?;
    Ok(picture)
}
