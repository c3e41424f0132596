//! Per-iteration records and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::linalg::ParamVector;

/// Quantities measured at iterate `θ_t`, plus the step taken from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub sq_grad_norm: f64,
    /// Relative residual of the Newton system solved at `θ_t`.
    pub r: Option<f64>,
    /// Co-kernel residual of the same solve.
    pub r_h: Option<f64>,
    /// Step length applied from `θ_t`; 0 on the final row.
    pub step_size: f64,
    pub krylov_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    GradTol,
    /// The accepted step left the iterate unchanged.
    FixedPoint,
    /// Too many consecutive line-search failures.
    Stalled,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iter: usize,
    pub loss: f64,
    pub params: ParamVector,
}

#[derive(Debug, Clone)]
pub struct IterateTrace {
    pub rows: Vec<TraceRow>,
    pub snapshots: Vec<Snapshot>,
    pub terminal: ParamVector,
    pub termination: Termination,
    /// Iterate with the largest relative residual, if residuals were tracked.
    pub max_flat: Option<Snapshot>,
}

impl IterateTrace {
    pub fn terminal_row(&self) -> &TraceRow {
        self.rows
            .last()
            .expect("traces always hold at least one row")
    }

    pub fn completed_iterations(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn max_r(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.r).reduce(f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_rows(&self.rows, std::io::BufWriter::new(file))
    }
}

const HEADER: [&str; 7] = [
    "iter",
    "loss",
    "sq_grad_norm",
    "r",
    "r_H",
    "step_size",
    "krylov_iters",
];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_rows<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for row in rows {
        w.write_record([
            row.iter.to_string(),
            fmt_f64(row.loss),
            fmt_f64(row.sq_grad_norm),
            opt(row.r),
            opt(row.r_h),
            fmt_f64(row.step_size),
            row.krylov_iters.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<trace>"), e))?;
    Ok(())
}

/// Parses a trace written by [`write_rows`].
pub fn read_rows<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::MalformedTrace {
            row: 0,
            message: format!("expected header {}", HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::MalformedTrace {
            row: line,
            message: e.to_string(),
        })?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let float = |k: usize| -> Result<f64> {
            field(k).parse::<f64>().map_err(|_| Error::MalformedTrace {
                row: line,
                message: format!("column {} is not a number: {:?}", HEADER[k], field(k)),
            })
        };
        let maybe = |k: usize| -> Result<Option<f64>> {
            if field(k).is_empty() {
                Ok(None)
            } else {
                float(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<usize> {
            field(k)
                .parse::<usize>()
                .map_err(|_| Error::MalformedTrace {
                    row: line,
                    message: format!("column {} is not an integer: {:?}", HEADER[k], field(k)),
                })
        };
        rows.push(TraceRow {
            iter: int(0)?,
            loss: float(1)?,
            sq_grad_norm: float(2)?,
            r: maybe(3)?,
            r_h: maybe(4)?,
            step_size: float(5)?,
            krylov_iters: int(6)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::MalformedTrace {
            row: 0,
            message: "trace has no rows".into(),
        });
    }
    Ok(rows)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TraceRow> {
        vec![
            TraceRow {
                iter: 0,
                loss: 0.1 + 0.2,
                sq_grad_norm: 1e-300,
                r: Some(0.999_999_999_999),
                r_h: Some(3.3e-7),
                step_size: 1.0,
                krylov_iters: 7,
            },
            TraceRow {
                iter: 1,
                loss: -2.5,
                sq_grad_norm: 4.0,
                r: None,
                r_h: None,
                step_size: 0.0,
                krylov_iters: 0,
            },
        ]
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut buf = Vec::new();
        write_rows(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iter,loss,sq_grad_norm,r,r_H,step_size,krylov_iters\n"));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn malformed_traces_are_rejected() {
        let header = "iter,loss,sq_grad_norm,r,r_H,step_size,krylov_iters\n";
        assert!(read_rows(header.as_bytes()).is_err());
        let bad = format!("{header}0,abc,1,,,0,0\n");
        match read_rows(bad.as_bytes()) {
            Err(Error::MalformedTrace { row, .. }) => assert_eq!(row, 1),
            other => panic!("{other:?}"),
        }
        assert!(read_rows("a,b\n1,2\n".as_bytes()).is_err());
        let short = format!("{header}0,1,1\n");
        assert!(read_rows(short.as_bytes()).is_err());
    }
}
