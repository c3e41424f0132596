//! Whole experiments: build an objective, pretrain, sample starting points
//! uniformly by loss, run a critical-point finder from each, classify the
//! results and write them out.
//!
//! A results directory looks like
//!
//! ```text
//! manifest.json              config, versions, dataset metadata, per-run status
//! runs/<id>/start.csv        starting parameters, one per line
//! runs/<id>/trace.csv        iter,loss,sq_grad_norm,r,r_H,step_size,krylov_iters
//! runs/<id>/final.csv        terminal parameters
//! runs/<id>/outcome.json     classification of the run
//! training/trajectory_<t>.csv
//! tables/loss_index.csv      run,loss,morse_index,class,sq_grad_norm (terminal points)
//! tables/loss_index_max_flat.csv
//! tables/ecdf_r.csv          series,r,fraction for final and maximal r
//! ```
//!
//! Runs execute in parallel, one run per task, and are merged by run id, so
//! every file except the timing fields of `manifest.json` is identical
//! across reruns and thread counts.

mod config;
mod run;
mod sampling;
mod tables;

pub use config::{
    apply_override, DatasetConfig, ExperimentConfig, FinderConfig, FinderMethod, ModelConfig,
    Preprocess, Seeds, StartConfig, TableConfig, TrainerConfig,
};
pub use run::{
    build_dataset, build_field, diagnose_point, initial_point, load_outcomes, read_outcome,
    read_params, replay, replay_file, run_experiment, thread_count, write_params, Experiment,
    ExperimentResults, Manifest, PointDiagnosis, RunEntry, RunResult, StartOrigin, StartPoint,
    THREADS_ENV,
};
pub use sampling::{loss_uniform_indices, sample_loss_uniform, DEFAULT_LOSS_BINS};
pub use tables::{
    ecdf, loss_index_table, write_ecdf_csv, write_loss_index, write_loss_index_csv, LossIndexRow,
    PointChoice,
};
