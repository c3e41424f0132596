use crate::diagnostics::{cokernel_ratio, residual_ratio};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::{pinv_apply, sym_eig, ParamVector, DEFAULT_RANK_TOL};

use super::newton_mr::{run_second_order, Direction};
use super::{IterateTrace, SolverConfig};

/// Newton steps `(H + λI)p = −g` with the Newton-MR line search.
///
/// The system is solved through an eigendecomposition of `H`, treating
/// shifted eigenvalues below the rank cutoff as zero. The recorded `r` and
/// `r_H` describe the undamped system at the same point, so flatness is
/// measured the same way as for Newton-MR.
pub fn damped_newton<F: ScalarField + ?Sized>(
    field: &F,
    theta0: &ParamVector,
    damping: f64,
    cfg: &SolverConfig,
) -> Result<IterateTrace> {
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "damping must be finite and non-negative, got {damping}"
        )));
    }
    run_second_order(field, theta0, cfg, |theta, g| {
        let h = field.hessian(theta);
        let spectrum = sym_eig(&h)?;
        let h_norm = h.frobenius_norm();
        let cutoff = DEFAULT_RANK_TOL * (h_norm + damping).max(f64::MIN_POSITIVE);
        let coords = spectrum.eigenvectors.tr_mul(g);
        let scaled = coords.zip_map(&spectrum.eigenvalues, |c, l| {
            let shifted = l + damping;
            if shifted.abs() > cutoff {
                -c / shifted
            } else {
                0.0
            }
        });
        let p = &spectrum.eigenvectors * scaled;

        let newton = -pinv_apply(&spectrum, g, DEFAULT_RANK_TOL);
        let residual = h.mul_vec(&newton) + g;
        let res_norm = residual.norm();
        let r = residual_ratio(res_norm, h_norm, newton.norm(), g.norm());
        let r_h = cokernel_ratio(h.mul_vec(&residual).norm(), h_norm, res_norm);
        Ok(Direction {
            p,
            hg: h.mul_vec(g),
            r,
            r_h,
            krylov_iters: 0,
        })
    })
}
