//! Closed-form critical points of the linear autoencoder.
//!
//! For a no-bias linear autoencoder `x ↦ W₂W₁x` with hidden width `h`, the
//! critical points with full-rank restriction are indexed by subsets `S` of
//! covariance eigendirections with `|S| ≤ h`: the map `W₂W₁` is the
//! orthogonal projection onto those directions and the loss equals the
//! variance left unexplained, `Σ_{i∉S} λᵢ`.
//!
//! Loss and Hessian spectrum depend on the data only through its second
//! moment, so the points are built for a synthetic dataset whose second
//! moment is exactly `diag(λ)`. Any dataset with those covariance eigenvalues
//! has the same critical values and Morse indices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{morse_index, DEFAULT_MORSE_TOL};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::{sym_eig, ParamVector};

use super::{Activation, LossKind, NetworkField, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    Numerical,
}

#[derive(Debug, Clone)]
pub struct CriticalPointRecord {
    pub params: ParamVector,
    pub loss: f64,
    pub morse_index: f64,
    pub provenance: Provenance,
    /// Selected eigendirections (0-based, ascending eigenvalue order).
    pub subset: Vec<usize>,
}

impl CriticalPointRecord {
    pub fn matches(&self, loss: f64, morse_index: f64, loss_tol: f64) -> bool {
        (self.loss - loss).abs() <= loss_tol && self.morse_index == morse_index
    }
}

/// Network spec of the linear autoencoder these points belong to.
pub fn linear_ae_spec(input_dim: usize, hidden_width: usize) -> NetworkSpec {
    NetworkSpec {
        layer_widths: vec![input_dim, hidden_width, input_dim],
        activation: Activation::Identity,
        use_biases: false,
        loss_kind: LossKind::Mse,
        l2_coeff: 0.0,
    }
}

/// Loss field whose data second moment is exactly `diag(eigenvalues)`.
pub fn diagonal_covariance_field(eigenvalues: &[f64], hidden_width: usize) -> Result<NetworkField> {
    let d = eigenvalues.len();
    let scale = DVector::from_iterator(d, eigenvalues.iter().map(|l| (d as f64 * l).sqrt()));
    let x = DMatrix::from_diagonal(&scale);
    NetworkField::from_columns(linear_ae_spec(d, hidden_width), x.clone(), x)
}

/// Enumerates every critical point `W₂W₁ = P_S`, `|S| ≤ hidden_width`.
///
/// `cov_eigenvalues` must be distinct and positive; they are sorted
/// internally, and subsets refer to the sorted order.
pub fn linear_ae_critical_points(
    cov_eigenvalues: &[f64],
    hidden_width: usize,
) -> Result<Vec<CriticalPointRecord>> {
    let d = cov_eigenvalues.len();
    if hidden_width == 0 || hidden_width > d {
        return Err(Error::InvalidArgument(format!(
            "hidden width {hidden_width} must be in 1..={d}"
        )));
    }
    let mut lambdas = cov_eigenvalues.to_vec();
    lambdas.sort_by(f64::total_cmp);
    if lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument(
            "covariance eigenvalues must be positive".into(),
        ));
    }
    if lambdas.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(
            "repeated covariance eigenvalues give non-isolated critical sets".into(),
        ));
    }

    let field = diagonal_covariance_field(&lambdas, hidden_width)?;
    let total: f64 = lambdas.iter().sum();
    let mut records = Vec::new();
    for size in 0..=hidden_width {
        for subset in combinations(d, size) {
            let params = projection_params(d, hidden_width, &subset);
            let explained: f64 = subset.iter().map(|&i| lambdas[i]).sum();
            let spectrum = sym_eig(&field.hessian(&params))?;
            records.push(CriticalPointRecord {
                params,
                loss: total - explained,
                morse_index: morse_index(&spectrum, DEFAULT_MORSE_TOL),
                provenance: Provenance::Analytic,
                subset,
            });
        }
    }
    Ok(records)
}

/// `W₁` has rows `e_s` for `s ∈ S` (zero rows for unused units), `W₂ = W₁ᵀ`.
fn projection_params(d: usize, h: usize, subset: &[usize]) -> ParamVector {
    let mut w1 = DMatrix::zeros(h, d);
    for (r, &s) in subset.iter().enumerate() {
        w1[(r, s)] = 1.0;
    }
    let w2 = w1.transpose();
    let mut theta = Vec::with_capacity(2 * h * d);
    for m in [&w1, &w2] {
        for i in 0..m.nrows() {
            theta.extend(m.row(i).iter());
        }
    }
    DVector::from_vec(theta)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}
