//! Twice-differentiable objectives and the finite-difference oracles used to
//! audit their derivatives.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{DenseSymMatrix, ParamVector};

/// A smooth objective with analytic first and second derivatives.
///
/// Implementations hold only immutable state so they can be evaluated from
/// several threads at once.
pub trait ScalarField: Send + Sync {
    /// Number of parameters.
    fn dim(&self) -> usize;

    fn value(&self, theta: &ParamVector) -> f64;

    fn gradient(&self, theta: &ParamVector) -> ParamVector;

    fn value_and_gradient(&self, theta: &ParamVector) -> (f64, ParamVector) {
        (self.value(theta), self.gradient(theta))
    }

    /// Hessian-vector product `∇²f(θ)·v`.
    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> ParamVector;

    /// Materialized Hessian. The default assembles it column by column from
    /// `hvp` and symmetrizes the result.
    fn hessian(&self, theta: &ParamVector) -> DenseSymMatrix {
        hessian_from_hvp(self, theta)
    }

    /// Short human-readable name, used in manifests.
    fn name(&self) -> String {
        "field".to_string()
    }
}

impl<F: ScalarField + ?Sized> ScalarField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, theta: &ParamVector) -> f64 {
        (**self).value(theta)
    }
    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        (**self).gradient(theta)
    }
    fn value_and_gradient(&self, theta: &ParamVector) -> (f64, ParamVector) {
        (**self).value_and_gradient(theta)
    }
    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> ParamVector {
        (**self).hvp(theta, v)
    }
    fn hessian(&self, theta: &ParamVector) -> DenseSymMatrix {
        (**self).hessian(theta)
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

fn hessian_from_hvp<F: ScalarField + ?Sized>(field: &F, theta: &ParamVector) -> DenseSymMatrix {
    let n = field.dim();
    let mut cols = DMatrix::zeros(n, n);
    let mut e = DVector::zeros(n);
    for i in 0..n {
        e[i] = 1.0;
        cols.set_column(i, &field.hvp(theta, &e));
        e[i] = 0.0;
    }
    DenseSymMatrix::new(cols).expect("hessian-vector products must be finite")
}

/// Materializes `∇²f(θ)`.
pub fn dense_hessian<F: ScalarField + ?Sized>(field: &F, theta: &ParamVector) -> DenseSymMatrix {
    field.hessian(theta)
}

/// Default central-difference step, `1e-5·(1 + ‖θ‖∞)`.
pub fn default_fd_step(theta: &ParamVector) -> f64 {
    1e-5 * (1.0 + theta.amax())
}

/// Central-difference gradient.
pub fn fd_gradient<F: ScalarField + ?Sized>(field: &F, theta: &ParamVector, h: f64) -> ParamVector {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = theta.clone();
    DVector::from_fn(theta.len(), |i, _| {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = field.value(&probe);
        probe[i] = orig - h;
        let down = field.value(&probe);
        probe[i] = orig;
        (up - down) / (2.0 * h)
    })
}

/// Central difference of the gradient along `v`.
pub fn fd_hvp<F: ScalarField + ?Sized>(
    field: &F,
    theta: &ParamVector,
    v: &ParamVector,
    h: f64,
) -> ParamVector {
    assert!(h > 0.0, "finite-difference step must be positive");
    let up = field.gradient(&(theta + v * h));
    let down = field.gradient(&(theta - v * h));
    (up - down) / (2.0 * h)
}

/// Outcome of a finite-difference audit at one point.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeAudit {
    /// `‖∇f − fd‖ / (1 + ‖∇f‖)`.
    pub gradient_rel_error: f64,
    /// `‖Hv − fd‖ / (1 + ‖Hv‖)`.
    pub hvp_rel_error: f64,
}

/// Compares analytic derivatives against central differences at `theta`
/// along direction `v`.
pub fn audit_derivatives<F: ScalarField + ?Sized>(
    field: &F,
    theta: &ParamVector,
    v: &ParamVector,
) -> DerivativeAudit {
    let h_grad = f64::EPSILON.cbrt() * (1.0 + theta.amax());
    let g = field.gradient(theta);
    let g_fd = fd_gradient(field, theta, h_grad);
    let hv = field.hvp(theta, v);
    let h_hvp = f64::EPSILON.cbrt() * (1.0 + theta.amax()) / v.norm().max(1e-300);
    let hv_fd = fd_hvp(field, theta, v, h_hvp);
    DerivativeAudit {
        gradient_rel_error: (&g - &g_fd).norm() / (1.0 + g.norm()),
        hvp_rel_error: (&hv - &hv_fd).norm() / (1.0 + hv.norm()),
    }
}
