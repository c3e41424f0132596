use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::diagnostics::{OutcomeClass, RunOutcome};
use crate::error::{Error, Result};

/// Which iterate of a run a table row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointChoice {
    Terminal,
    /// The iterate with the largest relative residual.
    MaxFlat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossIndexRow {
    pub run: usize,
    pub loss: f64,
    pub morse_index: f64,
    pub sq_grad_norm: f64,
    /// Class of the run as a whole, which colors the point.
    pub class: OutcomeClass,
}

/// One row per run, dropping rows whose squared gradient norm exceeds
/// `grad_filter`. Runs without residuals have no max-flat point and are
/// skipped under [`PointChoice::MaxFlat`].
pub fn loss_index_table(
    outcomes: &[(usize, RunOutcome)],
    choice: PointChoice,
    grad_filter: Option<f64>,
) -> Vec<LossIndexRow> {
    outcomes
        .iter()
        .filter_map(|(run, o)| {
            let row = match choice {
                PointChoice::Terminal => LossIndexRow {
                    run: *run,
                    loss: o.terminal_loss,
                    morse_index: o.morse_index,
                    sq_grad_norm: o.terminal_sq_grad_norm,
                    class: o.class,
                },
                PointChoice::MaxFlat => {
                    let m = o.max_flat?;
                    LossIndexRow {
                        run: *run,
                        loss: m.loss,
                        morse_index: m.morse_index.unwrap_or(f64::NAN),
                        sq_grad_norm: m.sq_grad_norm,
                        class: o.class,
                    }
                }
            };
            match grad_filter {
                Some(limit) if row.sq_grad_norm > limit => None,
                _ => Some(row),
            }
        })
        .collect()
}

/// Empirical CDF as `(value, fraction ≤ value)` steps. Ties merge into one
/// step; NaNs are ignored.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    out
}

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_loss_index_csv(rows: &[LossIndexRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_loss_index(rows, file).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Columns `run,loss,morse_index,class,sq_grad_norm`.
pub fn write_loss_index<W: Write>(rows: &[LossIndexRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "loss", "morse_index", "class", "sq_grad_norm"])?;
    for r in rows {
        w.write_record([
            r.run.to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.morse_index),
            r.class.to_string(),
            fmt_f64(r.sq_grad_norm),
        ])?;
    }
    finish(w, Path::new("<table>"))
}

/// ECDFs of the terminal and the maximal `r` of every run, in columns
/// `series,r,fraction`.
pub fn write_ecdf_csv(outcomes: &[(usize, RunOutcome)], path: &Path) -> Result<()> {
    let terminal: Vec<f64> = outcomes.iter().filter_map(|(_, o)| o.terminal_r).collect();
    let maximal: Vec<f64> = outcomes
        .iter()
        .filter_map(|(_, o)| o.max_r_over_run)
        .collect();
    let mut w = create(path)?;
    w.write_record(["series", "r", "fraction"])?;
    for (series, values) in [("final", terminal), ("max", maximal)] {
        for (v, f) in ecdf(&values) {
            w.write_record([series.to_string(), fmt_f64(v), fmt_f64(f)])?;
        }
    }
    finish(w, path)
}
