//! Newton-MR: minimum-residual Newton steps with a line search on `‖∇f‖²`.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::ParamVector;

use super::krylov::{mrqlp_solve, HessianOperator};
use super::line_search::backtracking_line_search;
use super::{HessianMode, IterateTrace, Snapshot, SolverConfig, Termination, TraceRow};

/// A search direction together with the flatness residuals measured at
/// the point it was computed from.
pub(crate) struct Direction {
    pub p: ParamVector,
    /// `∇²f(θ)·∇f(θ)`, for the merit directional derivative.
    pub hg: ParamVector,
    pub r: f64,
    pub r_h: f64,
    pub krylov_iters: usize,
}

pub(crate) fn check_dim<F: ScalarField + ?Sized>(field: &F, theta: &ParamVector) -> Result<()> {
    if field.dim() != theta.len() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: field.dim(),
            found: theta.len(),
        });
    }
    Ok(())
}

/// Shared outer loop for Newton-type methods.
pub(crate) fn run_second_order<F, D>(
    field: &F,
    theta0: &ParamVector,
    cfg: &SolverConfig,
    mut direction: D,
) -> Result<IterateTrace>
where
    F: ScalarField + ?Sized,
    D: FnMut(&ParamVector, &ParamVector) -> Result<Direction>,
{
    cfg.validate()?;
    check_dim(field, theta0)?;

    let mut theta = theta0.clone();
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut max_flat: Option<Snapshot> = None;
    let mut pending: Option<Termination> = None;
    // a failed line search leaves θ unchanged, so the next row would repeat it
    let mut repeat: Option<TraceRow> = None;
    let mut failures = 0usize;

    let termination = loop {
        let iter = rows.len();
        let stop = pending.or({
            if iter >= cfg.outer_iters {
                Some(Termination::MaxIters)
            } else {
                None
            }
        });

        if let Some(prev) = repeat.take() {
            let row = TraceRow {
                iter,
                step_size: 0.0,
                ..prev
            };
            rows.push(row);
            if let Some(reason) = stop {
                break reason;
            }
            failures += 1;
            if failures >= cfg.stall_limit {
                break Termination::Stalled;
            }
            repeat = Some(row);
            continue;
        }

        let (loss, g) = field.value_and_gradient(&theta);
        let sq_grad_norm = g.norm_squared();
        if !loss.is_finite() || !sq_grad_norm.is_finite() {
            rows.push(TraceRow {
                iter,
                loss,
                sq_grad_norm,
                r: None,
                r_h: None,
                step_size: 0.0,
                krylov_iters: 0,
            });
            break Termination::Diverged;
        }
        let stop = stop.or({
            if iter > 0 && sq_grad_norm <= cfg.grad_tol_sq {
                Some(Termination::GradTol)
            } else {
                None
            }
        });

        let dir = direction(&theta, &g)?;
        let mut row = TraceRow {
            iter,
            loss,
            sq_grad_norm,
            r: Some(dir.r),
            r_h: Some(dir.r_h),
            step_size: 0.0,
            krylov_iters: dir.krylov_iters,
        };
        if max_flat.is_none() || rows.iter().all(|prev| prev.r < Some(dir.r)) {
            max_flat = Some(Snapshot {
                iter,
                loss,
                params: theta.clone(),
            });
        }
        if let Some(reason) = stop {
            rows.push(row);
            break reason;
        }

        let slope = 2.0 * dir.hg.dot(&dir.p);
        let alpha = backtracking_line_search(field, &theta, &dir.p, sq_grad_norm, slope, cfg);
        row.step_size = alpha;
        rows.push(row);
        if alpha == 0.0 {
            failures += 1;
            if failures >= cfg.stall_limit {
                break Termination::Stalled;
            }
            repeat = Some(row);
            continue;
        }
        failures = 0;
        let next = &theta + &dir.p * alpha;
        if next == theta {
            pending = Some(Termination::FixedPoint);
        }
        theta = next;
    };

    let last_loss = rows.last().map(|r| r.loss).unwrap_or(f64::NAN);
    Ok(IterateTrace {
        snapshots: vec![
            Snapshot {
                iter: 0,
                loss: rows[0].loss,
                params: theta0.clone(),
            },
            Snapshot {
                iter: rows.len() - 1,
                loss: last_loss,
                params: theta.clone(),
            },
        ],
        rows,
        terminal: theta,
        termination,
        max_flat,
    })
}

/// Newton-MR with the MINRES-QLP inner solver.
pub fn newton_mr<F: ScalarField + ?Sized>(
    field: &F,
    theta0: &ParamVector,
    cfg: &SolverConfig,
) -> Result<IterateTrace> {
    run_second_order(field, theta0, cfg, |theta, g| {
        let (sol, hg) = match cfg.hessian_mode {
            HessianMode::Dense => {
                let h = field.hessian(theta);
                (mrqlp_solve(&h, g, cfg)?, h.mul_vec(g))
            }
            HessianMode::Operator => {
                let op = HessianOperator { field, theta };
                (mrqlp_solve(&op, g, cfg)?, field.hvp(theta, g))
            }
        };
        Ok(Direction {
            p: sol.step,
            hg,
            r: sol.rel_residual,
            r_h: sol.cokernel_residual,
            krylov_iters: sol.iterations,
        })
    })
}
