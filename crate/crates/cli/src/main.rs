use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gvi::harness::{
    certify_bounds, gen_maze, run_deep, run_tabular, write_certification, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "gvi", version, about = "Run KL-regularized value iteration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML). Without it the preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment to start from when no --config is given.
    #[arg(long)]
    preset: Option<String>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` with a dotted key, e.g. `schedule.alpha1=4`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabular schemes on mazes, random MDPs or the two-state MDP.
    RunTabular(Common),
    /// Deep agents on the control tasks.
    RunDeep {
        #[command(flatten)]
        common: Common,
        /// Continue from checkpoints left in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Check saved traces against their recorded bounds.
    CertifyBounds {
        /// Trace files or directories to search.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also write the soundness table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a maze, print it and save its JSON description.
    GenMaze(Common),
    /// Print the resolved experiment configuration.
    PrintConfig(Common),
}

fn resolve(common: &Common, default_preset: &str) -> Result<ExperimentConfig> {
    let base = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => bail!("give either --config or --preset, not both"),
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, preset) => ExperimentConfig::preset(preset.as_deref().unwrap_or(default_preset))?,
    };
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seeds=[{seed}]"));
    }
    if let Some(seeds) = &common.seeds {
        let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
        overrides.push(format!("seeds=[{}]", list.join(",")));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("out_dir={:?}", out.display().to_string()));
    }
    Ok(base.with_overrides(&overrides)?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::RunTabular(common) => {
            let cfg = resolve(&common, "maze")?;
            let summaries = run_tabular(&cfg, &cfg.out_dir)
                .with_context(|| format!("tabular run `{}` failed", cfg.name))?;
            println!("{:<20}{:>8}{:>14}{:>14}{:>12}", "variant", "seeds", "final gap", "min gap", "violations");
            for s in &summaries {
                println!(
                    "{:<20}{:>8}{:>14.3e}{:>14.3e}{:>12}",
                    s.label, s.seeds, s.final_gap_mean, s.min_gap_mean, s.bound_violations
                );
            }
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::RunDeep { common, resume } => {
            let cfg = resolve(&common, "cartpole")?;
            let summaries = run_deep(&cfg, &cfg.out_dir, resume)
                .with_context(|| format!("deep run `{}` failed", cfg.name))?;
            println!("{:<12}{:>8}{:>16}{:>16}{:>12}", "variant", "seeds", "return (last)", "seed std", "td max");
            for s in &summaries {
                println!(
                    "{:<12}{:>8}{:>16.2}{:>16.2}{:>12.4}",
                    s.label, s.seeds, s.final_third_return_mean, s.final_third_seed_std, s.td_max_mean
                );
            }
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::CertifyBounds { paths, out } => {
            let report = certify_bounds(&paths)?;
            print!("{report}");
            if let Some(out) = out {
                write_certification(&report, &out)?;
            }
            if !report.is_sound() {
                bail!("{} bound violations", report.certification.violations);
            }
        }
        Command::GenMaze(common) => {
            let cfg = resolve(&common, "maze")?;
            for &seed in &cfg.seeds {
                println!("seed {seed}");
                print!("{}", gen_maze(&cfg, seed, &cfg.out_dir)?);
            }
        }
        Command::PrintConfig(common) => {
            let cfg = resolve(&common, "maze")?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}
