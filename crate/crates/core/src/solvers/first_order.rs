//! First-order methods: gradient-norm minimization and heavy-ball training.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::ParamVector;

use super::newton_mr::check_dim;
use super::{IterateTrace, Snapshot, Termination, TraceRow};

/// Merit or gradient magnitude at which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

fn first_order_row(iter: usize, loss: f64, sq_grad_norm: f64, step_size: f64) -> TraceRow {
    TraceRow {
        iter,
        loss,
        sq_grad_norm,
        r: None,
        r_h: None,
        step_size,
        krylov_iters: 0,
    }
}

/// Gradient descent on `½‖∇f‖²`, whose gradient is `∇²f·∇f`.
pub fn gradient_norm_min<F: ScalarField + ?Sized>(
    field: &F,
    theta0: &ParamVector,
    lr: f64,
    iters: usize,
) -> Result<IterateTrace> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    check_dim(field, theta0)?;
    let mut theta = theta0.clone();
    let mut rows = Vec::with_capacity(iters + 1);
    let termination = loop {
        let iter = rows.len();
        let (loss, g) = field.value_and_gradient(&theta);
        let sq = g.norm_squared();
        if !sq.is_finite() || 0.5 * sq > DIVERGENCE_LIMIT {
            rows.push(first_order_row(iter, loss, sq, 0.0));
            break Termination::Diverged;
        }
        if iter >= iters {
            rows.push(first_order_row(iter, loss, sq, 0.0));
            break Termination::MaxIters;
        }
        let update = field.hvp(&theta, &g) * lr;
        rows.push(first_order_row(iter, loss, sq, lr));
        if update.iter().all(|&u| u == 0.0) {
            rows.push(first_order_row(iter + 1, loss, sq, 0.0));
            break Termination::FixedPoint;
        }
        theta -= update;
    };
    Ok(finish(theta0, theta, rows, Vec::new(), termination))
}

/// Full-batch gradient descent with classical momentum,
/// `v ← μv − η∇f`, `θ ← θ + v`.
///
/// Parameters are snapshotted every `snapshot_every` epochs, and always at
/// the first and last epoch.
pub fn train_gd_momentum<F: ScalarField + ?Sized>(
    field: &F,
    theta0: &ParamVector,
    lr: f64,
    momentum: f64,
    epochs: usize,
    snapshot_every: usize,
) -> Result<IterateTrace> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    if snapshot_every == 0 {
        return Err(Error::InvalidArgument(
            "snapshot interval must be at least 1".into(),
        ));
    }
    check_dim(field, theta0)?;
    let mut theta = theta0.clone();
    let mut velocity = ParamVector::zeros(theta.len());
    let mut rows = Vec::with_capacity(epochs + 1);
    let mut snapshots = Vec::new();
    let termination = loop {
        let iter = rows.len();
        let (loss, g) = field.value_and_gradient(&theta);
        let sq = g.norm_squared();
        let diverged = !loss.is_finite() || !sq.is_finite() || sq > DIVERGENCE_LIMIT;
        let done = diverged || iter >= epochs;
        if iter % snapshot_every == 0 || done {
            snapshots.push(Snapshot {
                iter,
                loss,
                params: theta.clone(),
            });
        }
        rows.push(first_order_row(iter, loss, sq, if done { 0.0 } else { lr }));
        if diverged {
            break Termination::Diverged;
        }
        if done {
            break Termination::MaxIters;
        }
        velocity = &velocity * momentum - &g * lr;
        theta += &velocity;
    };
    Ok(finish(theta0, theta, rows, snapshots, termination))
}

fn finish(
    theta0: &ParamVector,
    theta: ParamVector,
    rows: Vec<TraceRow>,
    mut snapshots: Vec<Snapshot>,
    termination: Termination,
) -> IterateTrace {
    if snapshots.is_empty() {
        let last = rows.len() - 1;
        snapshots.push(Snapshot {
            iter: 0,
            loss: rows[0].loss,
            params: theta0.clone(),
        });
        snapshots.push(Snapshot {
            iter: last,
            loss: rows[last].loss,
            params: theta.clone(),
        });
    }
    IterateTrace {
        rows,
        snapshots,
        terminal: theta,
        termination,
        max_flat: None,
    }
}
