//! Flatness and curvature diagnostics.
//!
//! A point is approximately gradient-flat when the Newton system there is
//! badly unsatisfiable (relative residual `r` near 1) while the part of the
//! residual the Hessian can see is small (co-kernel residual `r_H` near 0).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::{DenseSymMatrix, ParamVector, Spectrum};
use crate::solvers::{IterateTrace, Termination, TraceRow};

/// Negative-eigenvalue cutoff, relative to `max(1, |λ|max)`.
pub const DEFAULT_MORSE_TOL: f64 = 1e-10;

/// Thresholds separating the outcome classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Cutoffs {
    /// Squared gradient norm below which a point counts as critical.
    pub grad_sq: f64,
    /// Relative residual above which a point may be gradient-flat.
    pub r_min: f64,
    /// Co-kernel residual below which a point may be gradient-flat.
    pub r_h_max: f64,
    pub morse_tol: f64,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            grad_sq: 1e-10,
            r_min: 0.9,
            r_h_max: 5e-4,
            morse_tol: DEFAULT_MORSE_TOL,
        }
    }
}

/// Which matrix norm sits in the residual denominators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormConvention {
    /// Exact Frobenius norm of a materialized Hessian.
    Frobenius,
    /// Lanczos estimate of the spectral norm, a lower bound on `‖H‖_F`.
    LanczosEstimate,
}

/// `‖Hp + g‖ / (‖H‖_F‖p‖ + ‖g‖)`, or 0 when `p` and `g` both vanish.
pub fn relative_residual(h: &DenseSymMatrix, p: &ParamVector, g: &ParamVector) -> f64 {
    let residual = h.mul_vec(p) + g;
    residual_ratio(residual.norm(), h.frobenius_norm(), p.norm(), g.norm())
}

pub(crate) fn residual_ratio(residual: f64, h_norm: f64, p_norm: f64, g_norm: f64) -> f64 {
    let denom = h_norm * p_norm + g_norm;
    if denom == 0.0 {
        0.0
    } else {
        (residual / denom).clamp(0.0, 1.0)
    }
}

/// `‖H(Hp + g)‖ / (‖H‖_F‖Hp + g‖)`, or 0 when the residual vanishes.
pub fn cokernel_residual(h: &DenseSymMatrix, p: &ParamVector, g: &ParamVector) -> f64 {
    let residual = h.mul_vec(p) + g;
    let h_res = h.mul_vec(&residual);
    cokernel_ratio(h_res.norm(), h.frobenius_norm(), residual.norm())
}

pub(crate) fn cokernel_ratio(h_residual: f64, h_norm: f64, residual: f64) -> f64 {
    let denom = h_norm * residual;
    if denom == 0.0 {
        0.0
    } else {
        h_residual / denom
    }
}

/// Rayleigh quotient `gᵀHg / gᵀg` of the gradient, from one
/// Hessian-vector product.
pub fn rayleigh_flatness<F: ScalarField + ?Sized>(field: &F, theta: &ParamVector) -> Result<f64> {
    let g = field.gradient(theta);
    let gg = g.norm_squared();
    if gg == 0.0 {
        return Err(Error::InvalidArgument(
            "rayleigh flatness is undefined at a zero gradient".into(),
        ));
    }
    Ok(g.dot(&field.hvp(theta, &g)) / gg)
}

/// Fraction of eigenvalues below `−tol·max(1, |λ|max)`.
pub fn morse_index(spectrum: &Spectrum, tol: f64) -> f64 {
    let n = spectrum.dim();
    if n == 0 {
        return 0.0;
    }
    let cutoff = -tol * spectrum.spectral_norm().max(1.0);
    let negative = spectrum.eigenvalues.iter().filter(|&&l| l < cutoff).count();
    negative as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub r: f64,
    pub r_h: f64,
    pub rayleigh: Option<f64>,
    pub is_gradient_flat: bool,
    pub r_min: f64,
    pub r_h_max: f64,
    pub norm_convention: NormConvention,
}

impl FlatnessReport {
    pub fn new(
        r: f64,
        r_h: f64,
        rayleigh: Option<f64>,
        cutoffs: &Cutoffs,
        norm_convention: NormConvention,
    ) -> Self {
        Self {
            r,
            r_h,
            rayleigh,
            is_gradient_flat: is_flat(r, r_h, cutoffs),
            r_min: cutoffs.r_min,
            r_h_max: cutoffs.r_h_max,
            norm_convention,
        }
    }
}

fn is_flat(r: f64, r_h: f64, cutoffs: &Cutoffs) -> bool {
    r > cutoffs.r_min && r_h < cutoffs.r_h_max
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    Critical,
    GradientFlat,
    Neither,
}

impl OutcomeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeClass::Critical => "critical",
            OutcomeClass::GradientFlat => "gradient_flat",
            OutcomeClass::Neither => "neither",
        }
    }
}

impl std::fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Class of a single trace row under `cutoffs`.
pub fn classify_row(row: &TraceRow, cutoffs: &Cutoffs) -> OutcomeClass {
    if row.sq_grad_norm < cutoffs.grad_sq {
        OutcomeClass::Critical
    } else if matches!((row.r, row.r_h), (Some(r), Some(rh)) if is_flat(r, rh, cutoffs)) {
        OutcomeClass::GradientFlat
    } else {
        OutcomeClass::Neither
    }
}

/// The maximally gradient-flat iterate of a run (largest `r`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxFlatPoint {
    pub iter: usize,
    pub loss: f64,
    pub sq_grad_norm: f64,
    pub r: f64,
    pub r_h: f64,
    pub morse_index: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub class: OutcomeClass,
    pub terminal_sq_grad_norm: f64,
    pub terminal_loss: f64,
    pub terminal_r: Option<f64>,
    pub terminal_r_h: Option<f64>,
    pub morse_index: f64,
    pub max_r_over_run: Option<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub max_flat: Option<MaxFlatPoint>,
    pub cutoffs: Cutoffs,
}

impl RunOutcome {
    /// Builds an outcome from stored trace rows alone. Morse indices are
    /// supplied by the caller because they need the Hessian.
    pub fn from_rows(
        rows: &[TraceRow],
        termination: Termination,
        cutoffs: &Cutoffs,
        morse_index: f64,
        max_flat_index: Option<f64>,
    ) -> Result<Self> {
        let last = rows.last().ok_or(Error::MalformedTrace {
            row: 0,
            message: "trace has no rows".into(),
        })?;
        let max_flat = max_flat_row(rows).map(|row| MaxFlatPoint {
            iter: row.iter,
            loss: row.loss,
            sq_grad_norm: row.sq_grad_norm,
            r: row.r.unwrap_or(f64::NAN),
            r_h: row.r_h.unwrap_or(f64::NAN),
            morse_index: max_flat_index,
        });
        Ok(Self {
            class: classify_row(last, cutoffs),
            terminal_sq_grad_norm: last.sq_grad_norm,
            terminal_loss: last.loss,
            terminal_r: last.r,
            terminal_r_h: last.r_h,
            morse_index,
            max_r_over_run: max_flat.map(|m| m.r),
            iterations: rows.len() - 1,
            termination,
            max_flat,
            cutoffs: *cutoffs,
        })
    }
}

/// Row with the largest relative residual; earliest wins ties.
pub fn max_flat_row(rows: &[TraceRow]) -> Option<&TraceRow> {
    rows.iter().filter(|row| row.r.is_some()).fold(
        None,
        |best: Option<&TraceRow>, row| match best {
            Some(b) if b.r >= row.r => Some(b),
            _ => Some(row),
        },
    )
}

fn morse_at<F: ScalarField + ?Sized>(field: &F, theta: &ParamVector, tol: f64) -> Result<f64> {
    let spectrum = crate::linalg::sym_eig(&field.hessian(theta))?;
    Ok(morse_index(&spectrum, tol))
}

/// Classifies a finished run and computes Morse indices at its terminal and
/// maximally-flat points.
pub fn classify_outcome<F: ScalarField + ?Sized>(
    trace: &IterateTrace,
    field: &F,
    cutoffs: &Cutoffs,
) -> Result<RunOutcome> {
    let terminal_index = morse_at(field, &trace.terminal, cutoffs.morse_tol)?;
    let max_flat_index = match &trace.max_flat {
        Some(snap) => Some(morse_at(field, &snap.params, cutoffs.morse_tol)?),
        None => None,
    };
    RunOutcome::from_rows(
        &trace.rows,
        trace.termination,
        cutoffs,
        terminal_index,
        max_flat_index,
    )
}

/// Centered moving average. Near the ends the window shrinks to the samples
/// that exist.
pub fn smooth_trace(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let before = (window - 1) / 2;
    let after = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}
