use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    fmt_f64, gaussian_dataset, gaussian_mixture, load_csv, pca_project, seeded_rng, shuffle_labels,
    zscore, Dataset, DatasetMeta,
};
use crate::diagnostics::{
    classify_outcome, classify_row, morse_index, rayleigh_flatness, Cutoffs, OutcomeClass,
    RunOutcome,
};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::{sym_eig, ParamVector};
use crate::models::{init_params, NetworkField, QuarticField};
use crate::solvers::{
    damped_newton, gradient_norm_min, mrqlp_solve, newton_mr, read_trace_csv, train_gd_momentum,
    IterateTrace, Snapshot, SolverConfig, Termination, TraceRow,
};

use super::config::{
    DatasetConfig, ExperimentConfig, FinderMethod, ModelConfig, Preprocess, StartConfig,
};
use super::sampling::loss_uniform_indices;
use super::tables::{loss_index_table, write_ecdf_csv, write_loss_index_csv, PointChoice};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "FLATSCAN_THREADS";

/// Applies the configured preprocessing to the configured dataset.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Option<Dataset>> {
    let seeds = cfg.seeds;
    let mut data = match &cfg.dataset {
        DatasetConfig::None => {
            if !cfg.preprocess.is_empty() {
                return Err(Error::Config("preprocessing needs a dataset".into()));
            }
            return Ok(None);
        }
        DatasetConfig::Gaussian { samples, dim } => gaussian_dataset(*samples, *dim, seeds.data)?,
        DatasetConfig::Mixture {
            samples,
            dim,
            classes,
            separation,
        } => gaussian_mixture(*samples, *dim, *classes, *separation, seeds.data)?,
        DatasetConfig::Csv {
            path,
            targets,
            has_header,
        } => load_csv(path, targets, *has_header)?,
    };
    for step in &cfg.preprocess {
        data = match step {
            Preprocess::Zscore => zscore(&data),
            Preprocess::Pca { components } => pca_project(&data, *components)?,
            Preprocess::ShuffleLabels => shuffle_labels(&data, seeds.shuffle)?,
            Preprocess::DropTargets => {
                let mut meta = data.meta.clone();
                meta.notes.push("drop_targets".into());
                Dataset::new(data.inputs().clone(), None, meta)?
            }
        };
    }
    Ok(Some(data))
}

pub fn build_field(model: &ModelConfig, data: Option<&Dataset>) -> Result<Box<dyn ScalarField>> {
    match model {
        ModelConfig::Quartic => Ok(Box::new(QuarticField)),
        ModelConfig::Network(spec) => {
            let data = data.ok_or_else(|| Error::Config("network models need a dataset".into()))?;
            Ok(Box::new(NetworkField::new(spec.clone(), data)?))
        }
    }
}

/// Seeded initialization: the network's layer-scaled uniform draw, or a
/// uniform point of `[−4, 4]²` for the quartic.
pub fn initial_point(model: &ModelConfig, seed: u64) -> ParamVector {
    match model {
        ModelConfig::Network(spec) => init_params(spec, seed),
        ModelConfig::Quartic => {
            let mut rng = seeded_rng(seed);
            DVector::from_fn(2, |_, _| rng.random_range(-4.0..4.0))
        }
    }
}

/// Where a run's starting point came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StartOrigin {
    Snapshot { trajectory: usize, iter: usize },
    Init { seed: u64 },
    Grid { index: usize },
    Explicit { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartPoint {
    pub params: ParamVector,
    pub origin: StartOrigin,
}

/// A built experiment: dataset and objective, ready to train and run.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Option<Dataset>,
    pub field: Box<dyn ScalarField>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = build_dataset(&config)?;
        let field = build_field(&config.model, dataset.as_ref())?;
        Ok(Self {
            config,
            dataset,
            field,
        })
    }

    /// Pretraining trajectories, one per configured seed.
    pub fn train(&self) -> Result<Vec<IterateTrace>> {
        let t = &self.config.trainer;
        (0..t.trajectories)
            .map(|k| {
                let theta0 = initial_point(&self.config.model, self.config.seeds.init + k as u64);
                train_gd_momentum(
                    self.field.as_ref(),
                    &theta0,
                    t.lr,
                    t.momentum,
                    t.epochs,
                    t.snapshot_every,
                )
            })
            .collect()
    }

    /// Starting points for every run. Trained starts also return the
    /// pretraining traces.
    pub fn starts(&self) -> Result<(Vec<StartPoint>, Vec<IterateTrace>)> {
        let cfg = &self.config;
        let n = cfg.num_runs;
        let dim = self.field.dim();
        let points = match &cfg.starts {
            StartConfig::Trained => {
                let traces = self.train()?;
                let pool: Vec<(usize, &Snapshot)> = traces
                    .iter()
                    .enumerate()
                    .flat_map(|(t, tr)| tr.snapshots.iter().map(move |s| (t, s)))
                    .collect();
                let losses: Vec<f64> = pool.iter().map(|(_, s)| s.loss).collect();
                let idx =
                    loss_uniform_indices(&losses, n, cfg.seeds.sampling, cfg.trainer.loss_bins)?;
                let points = idx
                    .into_iter()
                    .map(|i| StartPoint {
                        params: pool[i].1.params.clone(),
                        origin: StartOrigin::Snapshot {
                            trajectory: pool[i].0,
                            iter: pool[i].1.iter,
                        },
                    })
                    .collect();
                return Ok((points, traces));
            }
            StartConfig::Init => (0..n)
                .map(|i| {
                    let seed = cfg.seeds.init + i as u64;
                    StartPoint {
                        params: initial_point(&cfg.model, seed),
                        origin: StartOrigin::Init { seed },
                    }
                })
                .collect(),
            StartConfig::Grid {
                lo,
                hi,
                points_per_axis,
            } => {
                let k = *points_per_axis;
                let total = (k as u128)
                    .checked_pow(dim as u32)
                    .filter(|&t| t <= 1 << 24);
                let total = total.ok_or_else(|| {
                    Error::Config(format!("a {k}-point grid in {dim} dimensions is too large"))
                })? as usize;
                if n > total {
                    return Err(Error::Config(format!(
                        "num_runs {n} exceeds the {total} grid points"
                    )));
                }
                let axis: Vec<f64> = (0..k)
                    .map(|i| {
                        if k == 1 {
                            *lo
                        } else {
                            lo + (hi - lo) * i as f64 / (k - 1) as f64
                        }
                    })
                    .collect();
                (0..n)
                    .map(|j| {
                        let index = j * total / n;
                        // row-major: the first coordinate varies slowest
                        let mut rest = index;
                        let mut coords = vec![0.0; dim];
                        for c in coords.iter_mut().rev() {
                            *c = axis[rest % k];
                            rest /= k;
                        }
                        StartPoint {
                            params: DVector::from_vec(coords),
                            origin: StartOrigin::Grid { index },
                        }
                    })
                    .collect()
            }
            StartConfig::Explicit { points } => {
                if let Some(p) = points.iter().find(|p| p.len() != dim) {
                    return Err(Error::Config(format!(
                        "explicit start has {} coordinates, the model has {dim}",
                        p.len()
                    )));
                }
                (0..n)
                    .map(|i| StartPoint {
                        params: DVector::from_column_slice(&points[i % points.len()]),
                        origin: StartOrigin::Explicit {
                            index: i % points.len(),
                        },
                    })
                    .collect()
            }
        };
        Ok((points, Vec::new()))
    }

    /// Runs the configured finder from `start` and classifies the result.
    pub fn run_from(&self, start: &ParamVector) -> Result<(IterateTrace, RunOutcome)> {
        let cfg = &self.config;
        let solver = cfg.solver_config();
        let field = self.field.as_ref();
        let trace = match cfg.finder.method {
            FinderMethod::NewtonMr => newton_mr(field, start, &solver)?,
            FinderMethod::DampedNewton => damped_newton(field, start, cfg.finder.damping, &solver)?,
            FinderMethod::GradientNormMin => {
                gradient_norm_min(field, start, cfg.finder.lr, solver.outer_iters)?
            }
        };
        let outcome = classify_outcome(&trace, field, &cfg.cutoffs)?;
        Ok((trace, outcome))
    }

    /// Trains, samples, runs every start on the worker pool and, when
    /// `output_dir` is set, writes the results directory.
    pub fn run(&self) -> Result<ExperimentResults> {
        let clock = Instant::now();
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let (starts, training) = self.starts()?;
        log::info!(
            "{}: {} runs of {:?} on {} ({} parameters)",
            self.config.name,
            starts.len(),
            self.config.finder.method,
            self.field.name(),
            self.field.dim()
        );
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count()?)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
        let runs: Vec<RunResult> = pool.install(|| {
            starts
                .par_iter()
                .enumerate()
                .map(|(id, start)| {
                    let result = catch_unwind(AssertUnwindSafe(|| self.run_from(&start.params)))
                        .unwrap_or_else(|panic| {
                            let msg = panic
                                .downcast_ref::<String>()
                                .cloned()
                                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                                .unwrap_or_else(|| "run panicked".into());
                            Err(Error::InvalidArgument(msg))
                        });
                    let (trace, outcome, error) = match result {
                        Ok((t, o)) => (Some(t), Some(o), None),
                        Err(e) => {
                            log::warn!("run {id} failed: {e}");
                            (None, None, Some(e.to_string()))
                        }
                    };
                    RunResult {
                        id,
                        start: start.clone(),
                        trace,
                        outcome,
                        error,
                    }
                })
                .collect()
        });

        let mut class_counts = BTreeMap::new();
        for r in &runs {
            let key = r
                .outcome
                .as_ref()
                .map_or("failed".to_string(), |o| o.class.to_string());
            *class_counts.entry(key).or_insert(0) += 1;
        }
        let manifest = Manifest {
            name: self.config.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            field: self.field.name(),
            num_params: self.field.dim(),
            dataset: self.dataset.as_ref().map(|d| d.meta.clone()),
            started_unix,
            wall_clock_secs: clock.elapsed().as_secs_f64(),
            class_counts,
            runs: runs
                .iter()
                .map(|r| RunEntry {
                    id: r.id,
                    origin: r.start.origin,
                    start_loss: self.field.value(&r.start.params),
                    class: r.outcome.as_ref().map(|o| o.class),
                    error: r.error.clone(),
                })
                .collect(),
        };
        let results = ExperimentResults {
            manifest,
            runs,
            training,
        };
        if let Some(dir) = &self.config.output_dir {
            results.write(dir)?;
        }
        Ok(results)
    }
}

/// Builds and runs an experiment in one call.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    Experiment::new(cfg.clone())?.run()
}

/// Worker count from the environment; 0 lets rayon decide.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                Error::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got {s:?}"
                ))
            }),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub id: usize,
    pub start: StartPoint,
    pub trace: Option<IterateTrace>,
    pub outcome: Option<RunOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub id: usize,
    pub origin: StartOrigin,
    pub start_loss: f64,
    pub class: Option<OutcomeClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub field: String,
    pub num_params: usize,
    pub dataset: Option<DatasetMeta>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub class_counts: BTreeMap<String, usize>,
    pub runs: Vec<RunEntry>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub manifest: Manifest,
    /// In run-id order.
    pub runs: Vec<RunResult>,
    pub training: Vec<IterateTrace>,
}

impl ExperimentResults {
    /// Successful runs, keyed by id.
    pub fn outcomes(&self) -> Vec<(usize, RunOutcome)> {
        self.runs
            .iter()
            .filter_map(|r| r.outcome.clone().map(|o| (r.id, o)))
            .collect()
    }

    /// Writes the results directory. Everything goes to `<dir>.partial`
    /// first, which then replaces `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let staging = staging_path(dir);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(&staging.join("runs"))?;
        mkdir(&staging.join("tables"))?;

        write_json(&staging.join("manifest.json"), &self.manifest)?;
        for run in &self.runs {
            let rd = staging.join("runs").join(run.id.to_string());
            mkdir(&rd)?;
            write_params(&run.start.params, &rd.join("start.csv"))?;
            if let (Some(trace), Some(outcome)) = (&run.trace, &run.outcome) {
                trace.write_csv(&rd.join("trace.csv"))?;
                write_params(&trace.terminal, &rd.join("final.csv"))?;
                write_json(&rd.join("outcome.json"), outcome)?;
            }
        }
        if !self.training.is_empty() {
            let td = staging.join("training");
            mkdir(&td)?;
            for (t, trace) in self.training.iter().enumerate() {
                trace.write_csv(&td.join(format!("trajectory_{t}.csv")))?;
            }
        }
        let outcomes = self.outcomes();
        let filter = self.manifest.config.tables.grad_filter;
        let tables = staging.join("tables");
        write_loss_index_csv(
            &loss_index_table(&outcomes, PointChoice::Terminal, filter),
            &tables.join("loss_index.csv"),
        )?;
        write_loss_index_csv(
            &loss_index_table(&outcomes, PointChoice::MaxFlat, filter),
            &tables.join("loss_index_max_flat.csv"),
        )?;
        write_ecdf_csv(&outcomes, &tables.join("ecdf_r.csv"))?;

        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
        log::info!("wrote {}", dir.display());
        Ok(())
    }
}

fn staging_path(dir: &Path) -> PathBuf {
    let mut s: OsString = dir.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_outcome(path: &Path) -> Result<RunOutcome> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Stored outcomes of a results directory, in run-id order.
pub fn load_outcomes(dir: &Path) -> Result<Vec<(usize, RunOutcome)>> {
    let runs = dir.join("runs");
    let entries = fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&runs, e))?;
        let Some(id) = entry
            .file_name()
            .to_str()
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        let path = entry.path().join("outcome.json");
        if path.exists() {
            out.push((id, read_outcome(&path)?));
        }
    }
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}

/// One coordinate per line.
pub fn write_params(theta: &ParamVector, path: &Path) -> Result<()> {
    let mut text = String::with_capacity(theta.len() * 24);
    for v in theta.iter() {
        text.push_str(&fmt_f64(*v));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a parameter vector written by [`write_params`]. Values may also be
/// comma separated; a non-numeric first line is taken as a header.
pub fn read_params(path: &Path) -> Result<ParamVector> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cells: Vec<&str> = line
            .split(',')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(vs) => values.extend(vs),
            Err(_) if i == 0 => continue,
            Err(_) => {
                let (column, cell) = cells
                    .iter()
                    .enumerate()
                    .find(|(_, c)| c.parse::<f64>().is_err())
                    .expect("a cell failed to parse");
                return Err(Error::CsvParse {
                    path: path.to_path_buf(),
                    row: i + 1,
                    column: column + 1,
                    message: format!("not a number: {cell:?}"),
                });
            }
        }
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no parameters",
            path.display()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter file"));
    }
    Ok(DVector::from_vec(values))
}

/// Reclassifies a stored trace under new cutoffs without re-running the
/// solver.
///
/// Termination and Morse indices are not recoverable from trace rows; they
/// are carried over from `stored` when given. Without it the termination is
/// reported as `max_iters` and the indices as NaN.
pub fn replay(
    rows: &[TraceRow],
    stored: Option<&RunOutcome>,
    cutoffs: &Cutoffs,
) -> Result<RunOutcome> {
    let termination = stored.map_or(Termination::MaxIters, |o| o.termination);
    let index = stored.map_or(f64::NAN, |o| o.morse_index);
    let flat_index = stored.and_then(|o| o.max_flat).and_then(|m| m.morse_index);
    RunOutcome::from_rows(rows, termination, cutoffs, index, flat_index)
}

/// Replays `trace.csv`, picking up `outcome.json` from the same directory
/// when present.
pub fn replay_file(trace: &Path, cutoffs: &Cutoffs) -> Result<RunOutcome> {
    let rows = read_trace_csv(trace)?;
    let sibling = trace.with_file_name("outcome.json");
    let stored = if sibling.exists() {
        Some(read_outcome(&sibling)?)
    } else {
        None
    };
    replay(&rows, stored.as_ref(), cutoffs)
}

/// Every flatness detector evaluated at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDiagnosis {
    pub loss: f64,
    pub sq_grad_norm: f64,
    /// Residuals of a fresh Krylov solve of the Newton system.
    pub r: f64,
    pub r_h: f64,
    pub step_norm: f64,
    pub krylov_iters: usize,
    /// `|gᵀHg| / ‖g‖²`; absent at a zero gradient.
    pub rayleigh_flatness: Option<f64>,
    pub morse_index: f64,
    pub class: OutcomeClass,
}

pub fn diagnose_point<F: ScalarField + ?Sized>(
    field: &F,
    theta: &ParamVector,
    solver: &SolverConfig,
    cutoffs: &Cutoffs,
) -> Result<PointDiagnosis> {
    if theta.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: field.dim(),
            found: theta.len(),
        });
    }
    let (loss, g) = field.value_and_gradient(theta);
    let h = field.hessian(theta);
    let sol = mrqlp_solve(&h, &g, solver)?;
    let spectrum = sym_eig(&h)?;
    let row = TraceRow {
        iter: 0,
        loss,
        sq_grad_norm: g.norm_squared(),
        r: Some(sol.rel_residual),
        r_h: Some(sol.cokernel_residual),
        step_size: 0.0,
        krylov_iters: sol.iterations,
    };
    Ok(PointDiagnosis {
        loss,
        sq_grad_norm: row.sq_grad_norm,
        r: sol.rel_residual,
        r_h: sol.cokernel_residual,
        step_norm: sol.step.norm(),
        krylov_iters: sol.iterations,
        rayleigh_flatness: rayleigh_flatness(field, theta).ok().map(f64::abs),
        morse_index: morse_index(&spectrum, cutoffs.morse_tol),
        class: classify_row(&row, cutoffs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ExperimentConfig;

    fn quartic(extra: &[&str]) -> ExperimentConfig {
        let text = r#"{"model": "quartic",
            "starts": {"grid": {"lo": -4.0, "hi": 4.0, "points_per_axis": 10}},
            "num_runs": 20}"#;
        let o: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_json_str(text, &o).unwrap()
    }

    #[test]
    fn grid_starts_are_strided_row_major() {
        let exp = Experiment::new(quartic(&[])).unwrap();
        let (starts, training) = exp.starts().unwrap();
        assert!(training.is_empty());
        assert_eq!(starts.len(), 20);
        assert_eq!(starts[0].params, DVector::from_vec(vec![-4.0, -4.0]));
        assert_eq!(starts[1].origin, StartOrigin::Grid { index: 5 });
        assert!((starts[1].params[1] - (-4.0 + 8.0 * 5.0 / 9.0)).abs() < 1e-15);
        assert_eq!(starts[19].params[0], 4.0);
        assert!(Experiment::new(quartic(&["num_runs=101"]))
            .unwrap()
            .starts()
            .is_err());
    }

    #[test]
    fn quartic_grid_finds_both_classes() {
        let res = run_experiment(&quartic(&[])).unwrap();
        let classes: Vec<_> = res.outcomes().iter().map(|(_, o)| o.class).collect();
        assert_eq!(classes.len(), 20);
        assert!(classes.contains(&OutcomeClass::Critical));
        assert!(classes.contains(&OutcomeClass::GradientFlat), "{classes:?}");
    }

    #[test]
    fn zero_iterations_classify_the_start() {
        let cfg = quartic(&["num_runs=1", "finder.iterations=0"]);
        let res = run_experiment(&cfg).unwrap();
        let run = &res.runs[0];
        let trace = run.trace.as_ref().unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.terminal, run.start.params);
        let o = run.outcome.as_ref().unwrap();
        assert_eq!(o.terminal_loss, QuarticField.value(&run.start.params));
    }

    #[test]
    fn minimum_of_the_quartic_in_the_table() {
        let cfg = quartic(&[
            r#"starts={"explicit": {"points": [[-3.0, 0.0], [-4.0, 1.0]]}}"#,
            "num_runs=2",
        ]);
        let res = run_experiment(&cfg).unwrap();
        let rows = loss_index_table(&res.outcomes(), PointChoice::Terminal, None);
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert!((r.loss - 6.25).abs() < 1e-12);
            assert_eq!(r.morse_index, 0.0);
            assert_eq!(r.class, OutcomeClass::Critical);
        }
    }

    #[test]
    fn failed_runs_do_not_abort_siblings() {
        let cfg = quartic(&[
            r#"starts={"explicit": {"points": [[1e200, 0.0], [-4.0, 1.0]]}}"#,
            "num_runs=2",
        ]);
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.runs.len(), 2);
        assert!(res.runs[1].outcome.is_some());
        assert_eq!(res.manifest.runs.len(), 2);
    }

    #[test]
    fn results_directory_is_complete_and_replayable() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("quartic");
        let cfg = quartic(&[&format!("output_dir={}", out.display())]);
        let res = run_experiment(&cfg).unwrap();
        for f in [
            "manifest.json",
            "tables/loss_index.csv",
            "tables/loss_index_max_flat.csv",
            "tables/ecdf_r.csv",
        ] {
            assert!(out.join(f).is_file(), "{f}");
        }
        assert!(!staging_path(&out).exists());
        let stored = load_outcomes(&out).unwrap();
        assert_eq!(stored, res.outcomes());
        for (id, o) in &stored {
            let rd = out.join("runs").join(id.to_string());
            let again = replay_file(&rd.join("trace.csv"), &cfg.cutoffs).unwrap();
            assert_eq!(&again, o);
            let terminal = read_params(&rd.join("final.csv")).unwrap();
            assert_eq!(&terminal, &res.runs[*id].trace.as_ref().unwrap().terminal);
        }
        // a second run replaces the directory with identical tables
        let before = fs::read(out.join("tables/loss_index.csv")).unwrap();
        run_experiment(&cfg).unwrap();
        assert_eq!(before, fs::read(out.join("tables/loss_index.csv")).unwrap());
    }

    #[test]
    fn looser_grad_cutoff_is_weakly_more_critical() {
        let res = run_experiment(&quartic(&[])).unwrap();
        let count = |grad_sq: f64| {
            let c = Cutoffs {
                grad_sq,
                ..Cutoffs::default()
            };
            res.runs
                .iter()
                .filter_map(|r| {
                    let t = r.trace.as_ref()?;
                    replay(&t.rows, r.outcome.as_ref(), &c).ok()
                })
                .filter(|o| o.class == OutcomeClass::Critical)
                .count()
        };
        assert!(count(1e-6) >= count(1e-10));
    }

    #[test]
    fn trained_starts_come_from_snapshots() {
        let text = r#"{"model": {"network": {"layer_widths": [3, 2, 3], "activation": "swish",
            "loss_kind": "mse"}}, "dataset": {"gaussian": {"samples": 20, "dim": 3}},
            "preprocess": ["zscore"], "starts": "trained", "num_runs": 4,
            "trainer": {"epochs": 30}, "finder": {"iterations": 3}}"#;
        let cfg = ExperimentConfig::from_json_str(text, &[]).unwrap();
        let exp = Experiment::new(cfg.clone()).unwrap();
        let (starts, training) = exp.starts().unwrap();
        assert_eq!(training.len(), 1);
        assert_eq!(training[0].snapshots.len(), 31);
        for s in &starts {
            let StartOrigin::Snapshot {
                trajectory: 0,
                iter,
            } = s.origin
            else {
                panic!("{:?}", s.origin)
            };
            assert_eq!(training[0].snapshots[iter].params, s.params);
        }
        let a = exp.run().unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.outcomes(), b.outcomes());
    }

    #[test]
    fn diagnosis_at_the_flat_point() {
        let theta = DVector::from_vec(vec![2f64.sqrt(), 0.0]);
        let d = diagnose_point(
            &QuarticField,
            &theta,
            &SolverConfig::default(),
            &Cutoffs::default(),
        )
        .unwrap();
        assert_eq!(d.step_norm, 0.0);
        assert_eq!(d.r, 1.0);
        assert!(d.r_h < 1e-12);
        assert!(d.rayleigh_flatness.unwrap() < 1e-12);
        assert_eq!(d.class, OutcomeClass::GradientFlat);
    }

    #[test]
    fn params_round_trip_and_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("theta.csv");
        let theta = DVector::from_vec(vec![0.1 + 0.2, -1e-300, 7.0]);
        write_params(&theta, &p).unwrap();
        assert_eq!(read_params(&p).unwrap(), theta);
        fs::write(&p, "theta\n1.0, 2.0\n3\n").unwrap();
        assert_eq!(read_params(&p).unwrap().len(), 3);
        fs::write(&p, "1.0\nx\n").unwrap();
        assert!(matches!(
            read_params(&p),
            Err(Error::CsvParse { row: 2, .. })
        ));
    }
}
