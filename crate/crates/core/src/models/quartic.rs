use nalgebra::DVector;

use crate::field::ScalarField;
use crate::linalg::{DenseSymMatrix, ParamVector};

/// `f(x, y) = x⁴/4 − 3x² + 9x + 0.9y⁴ + 5y² + 40`.
///
/// Its only critical point is the minimum at `(−3, 0)`. The Hessian is
/// singular along `x = ±√2`, and `(√2, 0)` is a strict gradient-flat point:
/// the gradient `(9 − 4√2, 0)` lies in the Hessian kernel there.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuarticField;

pub fn quartic_field() -> QuarticField {
    QuarticField
}

impl ScalarField for QuarticField {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, theta: &ParamVector) -> f64 {
        let (x, y) = (theta[0], theta[1]);
        0.25 * x.powi(4) - 3.0 * x * x + 9.0 * x + 0.9 * y.powi(4) + 5.0 * y * y + 40.0
    }

    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        let (x, y) = (theta[0], theta[1]);
        DVector::from_vec(vec![x.powi(3) - 6.0 * x + 9.0, 3.6 * y.powi(3) + 10.0 * y])
    }

    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> ParamVector {
        let (hxx, hyy) = diag(theta);
        DVector::from_vec(vec![hxx * v[0], hyy * v[1]])
    }

    fn hessian(&self, theta: &ParamVector) -> DenseSymMatrix {
        let (hxx, hyy) = diag(theta);
        DenseSymMatrix::from_diagonal(&[hxx, hyy]).expect("finite quartic hessian")
    }

    fn name(&self) -> String {
        "quartic".to_string()
    }
}

fn diag(theta: &ParamVector) -> (f64, f64) {
    let (x, y) = (theta[0], theta[1]);
    (3.0 * x * x - 6.0, 10.8 * y * y + 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{fd_gradient, fd_hvp};

    fn p(x: f64, y: f64) -> ParamVector {
        DVector::from_vec(vec![x, y])
    }

    #[test]
    fn value_at_origin() {
        assert_eq!(QuarticField.value(&p(0.0, 0.0)), 40.0);
    }

    #[test]
    fn minimum_is_critical() {
        assert_eq!(QuarticField.gradient(&p(-3.0, 0.0)), p(0.0, 0.0));
        assert_eq!(QuarticField.value(&p(-3.0, 0.0)), 6.25);
    }

    #[test]
    fn gradient_flat_point() {
        let at = p(2f64.sqrt(), 0.0);
        let h = QuarticField.hessian(&at);
        let g = QuarticField.gradient(&at);
        assert!(h.get(0, 0).abs() < 1e-14);
        assert_eq!(h.get(1, 1), 10.0);
        assert!((g[0] - (9.0 - 4.0 * 2f64.sqrt())).abs() < 1e-14);
        assert_eq!(g[1], 0.0);
        assert!(h.mul_vec(&g).norm() < 1e-13);
    }

    #[test]
    fn derivatives_match_fd() {
        for &(x, y) in &[(0.3, -1.2), (-3.5, 2.0), (1.9, 0.4), (3.7, -3.9)] {
            let at = p(x, y);
            let g = QuarticField.gradient(&at);
            assert!((&g - fd_gradient(&QuarticField, &at, 1e-5)).amax() < 1e-7 * (1.0 + g.amax()));
            let v = p(0.6, -0.8);
            let hv = QuarticField.hvp(&at, &v);
            assert!((&hv - fd_hvp(&QuarticField, &at, &v, 1e-5)).amax() < 1e-7 * (1.0 + hv.amax()));
        }
    }
}
