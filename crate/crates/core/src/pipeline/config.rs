use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::TargetSpec;
use crate::diagnostics::Cutoffs;
use crate::error::{Error, Result};
use crate::models::NetworkSpec;
use crate::solvers::SolverConfig;

/// One experiment, as read from a JSON file.
///
/// Only `model`, `starts` and `num_runs` are required; everything else has
/// a default. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Applied in order after the dataset is built.
    #[serde(default)]
    pub preprocess: Vec<Preprocess>,
    pub starts: StartConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub finder: FinderConfig,
    pub num_runs: usize,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub cutoffs: Cutoffs,
    #[serde(default)]
    pub tables: TableConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "experiment".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// The two-parameter quartic with a global minimum and a gradient-flat
    /// point.
    Quartic,
    Network(NetworkSpec),
}

impl ModelConfig {
    /// Outer iteration cap used when `finder.iterations` is unset.
    pub fn default_iterations(&self) -> usize {
        match self {
            ModelConfig::Quartic => 100,
            ModelConfig::Network(_) => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    #[default]
    None,
    /// `N(0, diag(1, …, dim))` samples, mean-centered.
    Gaussian { samples: usize, dim: usize },
    Mixture {
        samples: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        targets: TargetSpec,
        /// `null` detects a header row.
        #[serde(default)]
        has_header: Option<bool>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Preprocess {
    Zscore,
    Pca {
        components: usize,
    },
    /// Permutes targets with `seeds.shuffle`.
    ShuffleLabels,
    /// Discards targets, so an MSE network autoencodes its inputs.
    DropTargets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StartConfig {
    /// Loss-uniform draws from the snapshots of pretraining runs.
    Trained,
    /// A fresh initialization per run, seeded with `seeds.init + run`.
    Init,
    /// A regular grid over `[lo, hi]` in every coordinate. When `num_runs`
    /// is smaller than the grid, evenly strided grid points are used.
    Grid {
        lo: f64,
        hi: f64,
        points_per_axis: usize,
    },
    Explicit {
        points: Vec<Vec<f64>>,
    },
}

/// Heavy-ball pretraining that produces the snapshot pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub snapshot_every: usize,
    /// Independent trajectories pooled before sampling, seeded
    /// `seeds.init + t`.
    pub trajectories: usize,
    /// Equal-width loss bins for loss-uniform sampling.
    pub loss_bins: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            epochs: 1000,
            snapshot_every: 1,
            trajectories: 1,
            loss_bins: super::DEFAULT_LOSS_BINS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinderMethod {
    #[default]
    NewtonMr,
    DampedNewton,
    GradientNormMin,
}

/// The critical-point finder. `iterations` overrides `solver.outer_iters`;
/// when unset the model default is used (100 for the quartic, 500 for
/// networks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinderConfig {
    pub method: FinderMethod,
    pub iterations: Option<usize>,
    /// Shift for `damped_newton`.
    pub damping: f64,
    /// Step size for `gradient_norm_min`.
    pub lr: f64,
    pub solver: SolverConfig,
}

impl Default for FinderConfig {
    fn default() -> Self {
        Self {
            method: FinderMethod::NewtonMr,
            iterations: None,
            damping: 1e-3,
            lr: 1e-3,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub sampling: u64,
    pub shuffle: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 0,
            init: 1,
            sampling: 2,
            shuffle: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableConfig {
    /// Drop loss-index rows whose squared gradient norm exceeds this.
    pub grad_filter: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_runs == 0 {
            return bad("num_runs must be at least 1".into());
        }
        if let ModelConfig::Network(spec) = &self.model {
            spec.validate()?;
            if matches!(self.dataset, DatasetConfig::None) {
                return bad("network models need a dataset".into());
            }
        }
        self.finder.solver.validate()?;
        if self.finder.method == FinderMethod::DampedNewton
            && !(self.finder.damping >= 0.0 && self.finder.damping.is_finite())
        {
            return bad(format!(
                "finder.damping must be non-negative, got {}",
                self.finder.damping
            ));
        }
        if self.finder.method == FinderMethod::GradientNormMin
            && !(self.finder.lr > 0.0 && self.finder.lr.is_finite())
        {
            return bad(format!(
                "finder.lr must be positive, got {}",
                self.finder.lr
            ));
        }
        match &self.starts {
            StartConfig::Trained => {
                let t = &self.trainer;
                if !(t.lr > 0.0 && t.lr.is_finite()) {
                    return bad(format!("trainer.lr must be positive, got {}", t.lr));
                }
                if !(0.0..1.0).contains(&t.momentum) {
                    return bad(format!(
                        "trainer.momentum must lie in [0, 1), got {}",
                        t.momentum
                    ));
                }
                if t.snapshot_every == 0 || t.trajectories == 0 || t.loss_bins == 0 {
                    return bad(
                        "trainer.snapshot_every, trajectories and loss_bins must be at least 1"
                            .into(),
                    );
                }
            }
            StartConfig::Grid {
                lo,
                hi,
                points_per_axis,
            } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) || *points_per_axis == 0 {
                    return bad("grid needs finite lo <= hi and points_per_axis >= 1".into());
                }
            }
            StartConfig::Explicit { points } => {
                if points.is_empty() {
                    return bad("explicit starts need at least one point".into());
                }
            }
            StartConfig::Init => {}
        }
        for step in &self.preprocess {
            if let Preprocess::Pca { components: 0 } = step {
                return bad("pca needs at least one component".into());
            }
        }
        if let Some(f) = self.tables.grad_filter {
            if f.is_nan() {
                return bad("tables.grad_filter must be a number".into());
            }
        }
        Ok(())
    }

    /// The solver settings with the effective outer iteration cap.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            outer_iters: self.finder_iterations(),
            ..self.finder.solver.clone()
        }
    }

    pub fn finder_iterations(&self) -> usize {
        self.finder
            .iterations
            .unwrap_or_else(|| self.model.default_iterations())
    }

    /// Parses a config from JSON text, applying `key.path=value` overrides
    /// first. Values are read as JSON when they parse and as strings
    /// otherwise.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                Error::Config(e.into_inner().to_string())
            } else {
                Error::Config(format!("{path}: {}", e.into_inner()))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, overrides)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(e))))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

/// Sets `a.b.c=value` inside a JSON object tree, creating intermediate
/// objects as needed.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!(
            "override {assignment:?} has an empty key"
        )));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = match node {
            Value::Object(map) => map,
            _ => {
                return Err(Error::Config(format!(
                    "override {key}: {part:?} is inside a non-object value"
                )))
            }
        };
        if parts.peek().is_none() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}
