//! Armijo backtracking on the squared gradient norm.

use crate::field::ScalarField;
use crate::linalg::ParamVector;

use super::SolverConfig;

/// Merit function `‖∇f(θ)‖²`.
pub fn sq_grad_merit<F: ScalarField + ?Sized>(field: &F, theta: &ParamVector) -> f64 {
    field.gradient(theta).norm_squared()
}

/// Step length along `p` for the merit `m(θ) = ‖∇f(θ)‖²`.
///
/// The unit step is tried first against the looser constant `rho_unit`;
/// after that `alpha0·βᵏ` for `k = 0..=max_backtracks` against `rho`.
/// `dir_deriv` is `∇m·p = 2(H∇f)ᵀp`; positive values are clamped to 0 so
/// that a non-descent direction only accepts non-increasing steps. Returns
/// 0 when every trial fails and 1 for a zero direction.
///
/// The sufficient-decrease constants multiply the slope of `½‖∇f‖²`, half
/// of `dir_deriv`. Against the full slope, an exact Newton step sits exactly
/// on the `rho_unit = 0.5` boundary and rounding decides whether it passes.
pub fn backtracking_line_search<F: ScalarField + ?Sized>(
    field: &F,
    theta: &ParamVector,
    p: &ParamVector,
    merit: f64,
    dir_deriv: f64,
    cfg: &SolverConfig,
) -> f64 {
    if p.iter().all(|&x| x == 0.0) {
        return 1.0;
    }
    let slope = 0.5 * dir_deriv.min(0.0);
    let accepts = |alpha: f64, rho: f64| {
        let trial = sq_grad_merit(field, &(theta + p * alpha));
        !trial.is_nan() && trial <= merit + rho * alpha * slope
    };
    if accepts(1.0, cfg.rho_unit) {
        return 1.0;
    }
    let mut alpha = cfg.alpha0;
    for _ in 0..=cfg.max_backtracks {
        if accepts(alpha, cfg.rho) {
            return alpha;
        }
        alpha *= cfg.beta;
    }
    0.0
}
