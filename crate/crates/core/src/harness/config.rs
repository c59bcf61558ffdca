use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deep::{DeepAlgorithm, DeepConfig};
use crate::env::{MazeSpec, TaskId};
use crate::error::{Error, Result};
use crate::tabular::{CoefficientSchedule, ErrorModel, TabularScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Mdvi,
    GviExplicit,
    GviStable,
    Averaged,
    Dgvi,
    Mdqn,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mdvi => "mdvi",
            Scheme::GviExplicit => "gvi_explicit",
            Scheme::GviStable => "gvi_stable",
            Scheme::Averaged => "averaged",
            Scheme::Dgvi => "dgvi",
            Scheme::Mdqn => "mdqn",
        }
    }

    pub fn is_deep(self) -> bool {
        matches!(self, Scheme::Dgvi | Scheme::Mdqn)
    }

    pub fn tabular(self) -> Option<TabularScheme> {
        match self {
            Scheme::Mdvi | Scheme::GviExplicit => Some(TabularScheme::Explicit),
            Scheme::GviStable => Some(TabularScheme::Stable),
            Scheme::Averaged => Some(TabularScheme::Averaged),
            Scheme::Dgvi | Scheme::Mdqn => None,
        }
    }

    pub fn algorithm(self) -> Option<DeepAlgorithm> {
        match self {
            Scheme::Dgvi => Some(DeepAlgorithm::Dgvi),
            Scheme::Mdqn => Some(DeepAlgorithm::Mdqn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    Maze {
        #[serde(flatten)]
        spec: MazeSpec,
    },
    RandomMdp {
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        seed: u64,
    },
    TwoState {
        period: usize,
    },
    Control {
        task: TaskId,
    },
}

impl EnvironmentSpec {
    pub fn is_control(&self) -> bool {
        matches!(self, EnvironmentSpec::Control { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Coefficient of the constant scheme.
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Starting coefficient of the error-aware rule.
    pub lambda_init: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            lambda: 30.0,
            alpha1: 2.0,
            alpha2: 0.9,
            lambda_init: 10.0,
        }
    }
}

/// A named copy of the base experiment with some keys overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub label: String,
    /// `key=value` assignments, same syntax as `--override`.
    #[serde(default)]
    pub overrides: Vec<String>,
}

/// One variant per value of a single key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scheme: Scheme,
    /// Tabular iterations.
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Regenerate the maze or random MDP from each run seed.
    pub environment_per_seed: bool,
    /// Save a deep checkpoint every this many environment steps (0 disables).
    pub checkpoint_every: usize,
    pub environment: EnvironmentSpec,
    pub schedule: ScheduleConfig,
    pub errors: ErrorModel,
    pub deep: DeepConfig,
    pub sweep: Option<Sweep>,
    pub variants: Vec<Variant>,
    /// Where each setting comes from; rewritten on every save.
    pub provenance: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            scheme: Scheme::GviExplicit,
            iterations: 2000,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            environment_per_seed: true,
            checkpoint_every: 0,
            environment: EnvironmentSpec::Maze {
                spec: MazeSpec::default(),
            },
            schedule: ScheduleConfig::default(),
            errors: ErrorModel::periodic_uniform(100),
            deep: DeepConfig::default(),
            sweep: None,
            variants: Vec::new(),
            provenance: BTreeMap::new(),
        }
    }
}

const REPORTED: &str = "reported";
const CHOSEN: &str = "chosen";

pub const PRESETS: &[&str] = &[
    "maze",
    "maze-alpha1-sweep",
    "maze-alpha2-sweep",
    "two-state",
    "cartpole",
    "pendulum",
];

fn variant(label: &str, overrides: &[&str]) -> Variant {
    Variant {
        label: label.into(),
        overrides: overrides.iter().map(|s| s.to_string()).collect(),
    }
}

impl ExperimentConfig {
    /// Built-in experiment definitions.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let cfg = match name {
            "maze" => Self {
                name: "maze".into(),
                variants: vec![
                    variant("gvi", &["scheme=\"gvi_explicit\""]),
                    variant("mdvi_lambda30", &["scheme=\"mdvi\"", "schedule.lambda=30.0"]),
                    variant("mdvi_lambda50", &["scheme=\"mdvi\"", "schedule.lambda=50.0"]),
                ],
                ..base
            },
            "maze-alpha1-sweep" => Self {
                name: "maze-alpha1-sweep".into(),
                sweep: Some(Sweep {
                    key: "schedule.alpha1".into(),
                    values: [0.5, 1.0, 2.0, 4.0].map(toml::Value::Float).to_vec(),
                }),
                ..base
            },
            "maze-alpha2-sweep" => Self {
                name: "maze-alpha2-sweep".into(),
                sweep: Some(Sweep {
                    key: "schedule.alpha2".into(),
                    values: [0.5, 0.7, 0.9, 0.99].map(toml::Value::Float).to_vec(),
                }),
                ..base
            },
            "two-state" => Self {
                name: "two-state".into(),
                environment: EnvironmentSpec::TwoState { period: 100 },
                errors: ErrorModel::periodic_uniform(100)
                    .with_mode(crate::tabular::ApplicationMode::ScalarBroadcast),
                variants: vec![
                    variant("gvi", &["scheme=\"gvi_explicit\""]),
                    variant("mdvi_lambda30", &["scheme=\"mdvi\"", "schedule.lambda=30.0"]),
                ],
                ..base
            },
            "cartpole" | "pendulum" => Self {
                name: name.into(),
                scheme: Scheme::Dgvi,
                environment: EnvironmentSpec::Control {
                    task: if name == "cartpole" {
                        TaskId::Cartpole
                    } else {
                        TaskId::DiscretePendulum
                    },
                },
                errors: ErrorModel::none(),
                variants: vec![
                    variant("dgvi", &["scheme=\"dgvi\""]),
                    variant("mdqn", &["scheme=\"mdqn\""]),
                ],
                ..base
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}`; available: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg.with_provenance())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// TOML text including a freshly computed provenance table.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.clone().with_provenance()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Marks every setting as reported by the original experiments or chosen
    /// here. Values that differ from the reported ones count as chosen.
    pub fn with_provenance(mut self) -> Self {
        let mut p = BTreeMap::new();
        let mut mark = |key: &str, reported: bool| {
            p.insert(key.to_string(), if reported { REPORTED } else { CHOSEN }.to_string());
        };
        let s = &self.schedule;
        mark("schedule.alpha1", s.alpha1 == 2.0);
        mark("schedule.alpha2", s.alpha2 == 0.9);
        mark("schedule.lambda", s.lambda == 30.0 || s.lambda == 50.0);
        mark("schedule.lambda_init", false);
        mark("seeds", self.seeds.len() == 5);
        mark("environment_per_seed", false);
        match &self.environment {
            EnvironmentSpec::Maze { spec } => {
                mark("environment.width", spec.width == 5);
                mark("environment.height", spec.height == 5);
                mark("environment.success_prob", spec.success_prob == 0.9);
                mark("environment.horizon", spec.horizon == 25);
                mark("environment.wall_density", false);
                mark("environment.gamma", false);
                mark("environment.goal_reward", false);
                mark("errors.period", self.errors.period == Some(100));
                mark("errors.mode", false);
                mark("iterations", false);
            }
            EnvironmentSpec::TwoState { period } => {
                mark("environment.period", *period == 100);
                mark("iterations", false);
            }
            EnvironmentSpec::RandomMdp { .. } => mark("environment", false),
            EnvironmentSpec::Control { .. } => {
                let d = &self.deep;
                mark("deep.hidden", d.hidden == [256, 256]);
                mark("deep.learning_rate", d.learning_rate == 1e-4);
                mark("deep.batch_size", d.batch_size == 32);
                mark("deep.gamma", d.gamma == 0.99);
                mark("deep.eval_every", d.eval_every == 300);
                mark("deep.eval_episodes", d.eval_episodes == 10);
                mark("deep.target_tau", d.target_tau.is_none());
                mark("deep.lambda_init", d.lambda_init == 10.0);
                for key in [
                    "deep.total_steps",
                    "deep.buffer_capacity",
                    "deep.warmup_steps",
                    "deep.nu",
                    "deep.nu_slow",
                    "deep.alpha1",
                    "deep.alpha2",
                    "deep.lambda_prime_init",
                    "deep.log_clip",
                    "deep.exploration",
                    "deep.adam_beta1",
                    "deep.adam_beta2",
                    "deep.adam_epsilon",
                ] {
                    mark(key, false);
                }
            }
        }
        self.provenance = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.scheme.is_deep() != self.environment.is_control() {
            return bad(format!(
                "scheme `{}` does not run on a {} environment",
                self.scheme.name(),
                if self.environment.is_control() { "control" } else { "tabular" }
            ));
        }
        if self.scheme.is_deep() {
            self.deep.validate()?;
        } else {
            if self.iterations == 0 {
                return bad("iterations must be positive".into());
            }
            self.errors.validate()?;
            self.tabular_schedule()?;
            match &self.environment {
                EnvironmentSpec::Maze { spec } => spec.validate()?,
                EnvironmentSpec::TwoState { period } if *period == 0 => {
                    return bad("two-state period must be positive".into())
                }
                EnvironmentSpec::RandomMdp {
                    num_states,
                    num_actions,
                    gamma,
                    ..
                } if *num_states == 0 || *num_actions == 0 || !(*gamma > 0.0 && *gamma < 1.0) => {
                    return bad("random MDP needs positive sizes and gamma in (0, 1)".into())
                }
                _ => {}
            }
        }
        let mut labels: Vec<&str> = self.variants.iter().map(|v| v.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("variant labels must be unique".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return bad(format!("sweep over `{}` has no values", sweep.key));
            }
        }
        Ok(())
    }

    /// The coefficient schedule implied by the scheme and schedule settings.
    pub fn tabular_schedule(&self) -> Result<CoefficientSchedule> {
        let s = &self.schedule;
        match self.scheme {
            Scheme::Mdvi => CoefficientSchedule::constant(s.lambda),
            Scheme::GviExplicit | Scheme::GviStable | Scheme::Averaged => {
                CoefficientSchedule::error_aware(s.alpha1, s.alpha2, s.lambda_init)
            }
            Scheme::Dgvi | Scheme::Mdqn => Err(Error::Config(format!(
                "scheme `{}` has no tabular schedule",
                self.scheme.name()
            ))),
        }
    }

    /// Applies `key=value` assignments, where `key` is a dotted path and
    /// `value` is TOML (bare words are taken as strings).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut doc, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: Self = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg.with_provenance())
    }

    /// The runs this config describes as `(label, config)` pairs: the sweep
    /// points, else the variants, else the config itself.
    pub fn expand(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        let mut base = self.clone();
        base.sweep = None;
        base.variants = Vec::new();
        if let Some(sweep) = &self.sweep {
            return sweep
                .values
                .iter()
                .map(|v| {
                    let shown = match v {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    let cfg = base.with_overrides(&[format!("{}={}", sweep.key, v)])?;
                    let leaf = sweep.key.rsplit('.').next().unwrap_or(&sweep.key);
                    Ok((format!("{leaf}_{shown}"), cfg))
                })
                .collect();
        }
        if self.variants.is_empty() {
            base.validate()?;
            return Ok(vec![(self.scheme.name().to_string(), base)]);
        }
        self.variants
            .iter()
            .map(|v| Ok((v.label.clone(), base.with_overrides(&v.overrides)?)))
            .collect()
    }
}

fn parse_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("empty override key `{key}`")))?;
    let mut node = doc;
    for p in parts {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not a table")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` does not name a table entry")))?
        .insert(last.to_string(), value);
    Ok(())
}
