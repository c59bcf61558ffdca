use std::path::PathBuf;

use gvi::harness::{
    certify_bounds, deep_run, final_third_stats, run_deep, run_tabular, ExperimentConfig, Scheme,
};
use gvi::Error;

fn quick_maze() -> ExperimentConfig {
    ExperimentConfig::preset("maze")
        .unwrap()
        .with_overrides(&["iterations=60", "seeds=[0, 1]"])
        .unwrap()
}

fn quick_deep() -> ExperimentConfig {
    ExperimentConfig::preset("pendulum")
        .unwrap()
        .with_overrides(&[
            "seeds=[0, 1]",
            "deep.hidden=[16, 16]",
            "deep.total_steps=900",
            "deep.warmup_steps=100",
            "deep.eval_every=300",
            "deep.eval_episodes=2",
            "deep.buffer_capacity=1000",
        ])
        .unwrap()
}

#[test]
fn tabular_run_writes_every_curve() {
    let dir = tempfile::tempdir().unwrap();
    let summaries = run_tabular(&quick_maze(), dir.path()).unwrap();
    assert_eq!(summaries.len(), 3);
    for label in ["gvi", "mdvi_lambda30", "mdvi_lambda50"] {
        for file in ["seed_0.csv", "seed_1.csv", "bounds_seed_0.csv", "aggregate.csv"] {
            assert!(dir.path().join(label).join(file).exists(), "{label}/{file}");
        }
    }
    assert!(summaries.iter().all(|s| s.bound_violations == 0));
    let agg = std::fs::read_to_string(dir.path().join("gvi/aggregate.csv")).unwrap();
    assert!(agg.starts_with("iter,gap_mean,gap_std,"));
    assert_eq!(agg.lines().count(), 61);
    assert!(dir.path().join("config.toml").exists());
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_tabular(&quick_maze(), a.path()).unwrap();
    run_tabular(&quick_maze(), b.path()).unwrap();
    for file in ["gvi/seed_1.csv", "mdvi_lambda50/aggregate.csv", "summary.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::preset("maze-alpha1-sweep")
        .unwrap()
        .with_overrides(&["iterations=20", "seeds=[3]"])
        .unwrap();
    let summaries = run_tabular(&cfg, dir.path()).unwrap();
    let labels: Vec<_> = summaries.iter().map(|s| s.label.as_str()).collect();
    assert_eq!(labels, ["alpha1_0.5", "alpha1_1.0", "alpha1_2.0", "alpha1_4.0"]);
    for l in labels {
        assert!(dir.path().join(l).join("aggregate.csv").exists());
    }
}

#[test]
fn validation_errors() {
    assert!(quick_maze().with_overrides(&["seeds=[]"]).is_err());
    assert!(ExperimentConfig::preset("cartpole")
        .unwrap()
        .with_overrides(&["environment.task=\"lunar_lander\""])
        .is_err());
    let dir = tempfile::tempdir().unwrap();
    let deep = quick_deep();
    assert!(run_tabular(&deep, dir.path()).is_err());
    assert!(run_deep(&quick_maze(), dir.path(), false).is_err());
}

#[test]
fn deep_run_aggregates_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let summaries = run_deep(&quick_deep(), dir.path(), false).unwrap();
    assert_eq!(summaries.len(), 2);
    let agg = std::fs::read_to_string(dir.path().join("dgvi/aggregate.csv")).unwrap();
    assert!(agg.starts_with("step,return_mean,return_std,"));
    assert_eq!(agg.lines().count(), 4);

    // an interrupted run leaves a checkpoint at step 300; resuming finishes it
    let mut cfg = quick_deep().expand().unwrap().remove(0).1;
    assert_eq!(cfg.scheme, Scheme::Dgvi);
    let uninterrupted = deep_run(&cfg, 0, None, false).unwrap();
    let ckdir = tempfile::tempdir().unwrap();
    cfg.checkpoint_every = 300;
    let task = gvi::env::ControlTask::discrete_pendulum();
    let mut trainer = gvi::deep::Trainer::new(task, cfg.deep.clone(), 0).unwrap();
    trainer.run_until(300).unwrap();
    trainer
        .save_checkpoint(&gvi::harness::checkpoint_path(ckdir.path(), 0))
        .unwrap();
    let resumed = deep_run(&cfg, 0, Some(ckdir.path()), true).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    uninterrupted.write_csv(&mut a).unwrap();
    resumed.write_csv(&mut b).unwrap();
    assert_eq!(a, b);

    let (std, mean) = final_third_stats(&[uninterrupted.clone(), resumed]);
    assert_eq!(std, 0.0);
    assert!(mean.is_finite());
}

#[test]
fn certification_of_saved_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_maze().with_overrides(&["variants=[]", "scheme=\"gvi_explicit\""]).unwrap();
    run_tabular(&cfg, dir.path()).unwrap();
    let report = certify_bounds(&[dir.path().to_path_buf()]).unwrap();
    assert_eq!(report.certification.runs, 2);
    assert_eq!(report.certification.iterations, 120);
    assert!(report.is_sound());

    // negative control: inflate one gap far past its bound
    let trace = dir.path().join("gvi_explicit/seed_0.csv");
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(String::from).collect();
    cells[3] = "1e9".into();
    lines[5] = cells.join(",");
    std::fs::write(&trace, lines.join("\n") + "\n").unwrap();
    let report = certify_bounds(&[trace.clone()]).unwrap();
    assert!(report.certification.violations >= 1);

    std::fs::write(&trace, "iter,lambda,err_norm,gap,bound_thm2,bound_thm1\n1,x,y\n").unwrap();
    assert!(matches!(certify_bounds(&[trace]), Err(Error::CorruptTrace { .. })));

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(
        certify_bounds(&[empty.path().to_path_buf()]),
        Err(Error::NoTraces(_))
    ));
    assert!(certify_bounds(&[PathBuf::from("/nonexistent/trace.csv")]).is_err());
}
