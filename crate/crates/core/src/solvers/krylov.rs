//! MINRES-QLP for symmetric, possibly singular and incompatible systems.
//!
//! Solves `H p = −g` in the least-squares sense. On incompatible systems the
//! iterates converge to the minimum-norm least-squares solution `−H⁺g`.
//! Every iteration runs in QLP form, so the rank-revealing factorization is
//! available from the start and no mode switch is needed.
//!
//! With reorthogonalization on (the default) the Lanczos basis is kept and
//! the returned step is recomputed at the end as the minimum-norm
//! least-squares solution over the Krylov subspace. The QLP recurrence then
//! only drives the stopping tests. Near an invariant subspace its last few
//! coordinate updates lose digits that the subspace solve does not.

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::{cokernel_ratio, residual_ratio, NormConvention};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::{sym_eig, DenseSymMatrix, ParamVector, DEFAULT_RANK_TOL};

use super::SolverConfig;

/// Lanczos residuals smaller than this, relative to `‖H‖`, end the
/// recurrence. Past this point the next basis vector is mostly rounding
/// noise and would spoil an iterate that has already converged.
const BREAKDOWN_TOL: f64 = 1.5e-8;

pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &ParamVector) -> ParamVector;
    /// Exact Frobenius norm, when the operator knows it.
    fn frobenius_norm(&self) -> Option<f64> {
        None
    }
}

impl SymmetricOperator for DenseSymMatrix {
    fn dim(&self) -> usize {
        DenseSymMatrix::dim(self)
    }
    fn apply(&self, v: &ParamVector) -> ParamVector {
        self.mul_vec(v)
    }
    fn frobenius_norm(&self) -> Option<f64> {
        Some(DenseSymMatrix::frobenius_norm(self))
    }
}

/// `v ↦ ∇²f(θ)·v` without materializing the Hessian.
pub struct HessianOperator<'a, F: ?Sized> {
    pub field: &'a F,
    pub theta: &'a ParamVector,
}

impl<F: ScalarField + ?Sized> SymmetricOperator for HessianOperator<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn apply(&self, v: &ParamVector) -> ParamVector {
        self.field.hvp(self.theta, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrylovStop {
    /// Relative residual reached `rtol`.
    Residual,
    /// Co-kernel residual reached `rtol`: a least-squares solution.
    CokernelResidual,
    /// The Krylov space became invariant.
    Breakdown,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct KrylovSolution {
    pub step: ParamVector,
    /// `‖Hp + g‖ / (‖H‖‖p‖ + ‖g‖)`, recomputed from the returned step.
    pub rel_residual: f64,
    /// `‖H(Hp + g)‖ / (‖H‖‖Hp + g‖)`, recomputed from the returned step.
    pub cokernel_residual: f64,
    pub iterations: usize,
    pub stop: KrylovStop,
    /// Norm used in both denominators.
    pub h_norm: f64,
    pub norm_convention: NormConvention,
}

/// `(c, s, r)` with `[c s; s −c]·[a; b] = [r; 0]`, stable in all regimes.
fn sym_givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        let c = if a == 0.0 { 1.0 } else { a.signum() };
        (c, 0.0, a.abs())
    } else if a == 0.0 {
        (0.0, b.signum(), b.abs())
    } else if b.abs() > a.abs() {
        let t = a / b;
        let s = b.signum() / (1.0 + t * t).sqrt();
        let c = s * t;
        (c, s, b / s)
    } else {
        let t = b / a;
        let c = a.signum() / (1.0 + t * t).sqrt();
        let s = c * t;
        (c, s, a / c)
    }
}

/// `V y` with `y` the minimum-norm minimizer of `‖(HV) y − b‖`.
///
/// Right singular vectors come from the Gram matrix, singular values are
/// measured directly as `‖HV w‖` so tiny ones are not lost to squaring, and
/// those below the rank tolerance are dropped. One refinement step follows.
fn subspace_min_norm(
    basis: &[ParamVector],
    images: &[ParamVector],
    b: &ParamVector,
) -> Result<ParamVector> {
    let hv = DMatrix::from_columns(images);
    let gram = DenseSymMatrix::new(hv.tr_mul(&hv))?;
    let spectrum = sym_eig(&gram)?;
    let w = &spectrum.eigenvectors;
    let z = &hv * w;
    let sigma: Vec<f64> = z.column_iter().map(|c| c.norm()).collect();
    let smax = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = DEFAULT_RANK_TOL * smax;
    let apply_pinv = |rhs: &ParamVector| {
        let mut y = DVector::zeros(w.ncols());
        for (i, &s) in sigma.iter().enumerate() {
            if s > cutoff && s > 0.0 {
                y.axpy(z.column(i).dot(rhs) / (s * s), &w.column(i), 1.0);
            }
        }
        y
    };
    let mut y = apply_pinv(b);
    let res = b - &hv * &y;
    y += apply_pinv(&res);
    let mut x = DVector::zeros(b.len());
    for (q, c) in basis.iter().zip(y.iter()) {
        x.axpy(*c, q, 1.0);
    }
    Ok(x)
}

/// Minimum-norm least-squares solution of `H p = −g`.
///
/// Stops when the relative residual or the co-kernel residual of an iterate
/// drops to `cfg.rtol`, after `cfg.maxit` iterations (default: dimension),
/// or when the Lanczos process breaks down. The co-kernel residual comes
/// out of the recurrence one iteration late. A gradient with
/// `r_H(0) ≤ rtol` yields the zero step.
pub fn mrqlp_solve<O: SymmetricOperator + ?Sized>(
    op: &O,
    g: &ParamVector,
    cfg: &SolverConfig,
) -> Result<KrylovSolution> {
    let n = op.dim();
    if g.len() != n {
        return Err(Error::DimensionMismatch {
            context: "gradient length",
            expected: n,
            found: g.len(),
        });
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::KrylovNaN("right-hand side is not finite".into()));
    }
    let b: ParamVector = -g;
    let beta1 = b.norm();
    let fixed_norm = op.frobenius_norm();
    let rtol = cfg.rtol;
    let maxit = cfg.krylov_maxit(n);

    let mut x = DVector::zeros(n);
    let mut iterations = 0;
    let mut stop = KrylovStop::MaxIterations;
    let mut anorm_est = 0.0f64;

    // r_H of the zero step, from the first Krylov product
    let mut first_image = None;
    if beta1 > 0.0 {
        let ab = op.apply(&b);
        let nrm = fixed_norm.unwrap_or(ab.norm() / beta1);
        if cokernel_ratio(ab.norm(), nrm, beta1) <= rtol {
            stop = KrylovStop::CokernelResidual;
        } else {
            first_image = Some(ab / beta1);
        }
    }

    if let (Some(image), true) = (first_image, maxit > 0) {
        let mut first_image = Some(image);
        let mut r1 = DVector::zeros(n);
        let mut r2 = b.clone();
        let mut r3 = b.clone();
        let (mut beta, mut betan) = (0.0f64, beta1);
        let mut phi = beta1;
        let mut rnorm = beta1;
        let (mut tau, mut taul) = (0.0f64, 0.0f64);
        let (mut cs, mut sn) = (-1.0f64, 0.0f64);
        let (mut cr1, mut sr1, mut cr2, mut sr2) = (-1.0f64, 0.0f64, -1.0f64, 0.0f64);
        let mut dltan = 0.0f64;
        let (mut gama, mut gamal) = (0.0f64, 0.0f64);
        let (mut eta, mut etal, mut etal2) = (0.0f64, 0.0f64, 0.0f64);
        let (mut vepln, mut veplnl, mut veplnl2) = (0.0f64, 0.0f64, 0.0f64);
        let (mut ul, mut ul2, mut ul3) = (0.0f64, 0.0f64, 0.0f64);
        let mut w: ParamVector = DVector::zeros(n);
        let mut wl: ParamVector = DVector::zeros(n);
        let mut xl2: ParamVector = DVector::zeros(n);
        let mut basis: Vec<ParamVector> = Vec::new();
        let mut images: Vec<ParamVector> = Vec::new();

        for iter in 1..=maxit {
            iterations = iter;

            // Lanczos step
            let betal = beta;
            beta = betan;
            let mut v = &r3 / beta;
            r3 = first_image.take().unwrap_or_else(|| op.apply(&v));
            if cfg.reorthogonalize {
                images.push(r3.clone());
            }
            if iter > 1 {
                r3.axpy(-beta / betal, &r1, 1.0);
            }
            let alfa = r3.dot(&v);
            r3.axpy(-alfa / beta, &r2, 1.0);
            if cfg.reorthogonalize {
                basis.push(v.clone());
                for _ in 0..2 {
                    for q in &basis {
                        let c = q.dot(&r3);
                        r3.axpy(-c, q, 1.0);
                    }
                }
            }
            r1 = std::mem::replace(&mut r2, r3.clone());
            betan = r3.norm();
            if !alfa.is_finite() || !betan.is_finite() {
                return Err(Error::KrylovNaN(format!(
                    "Lanczos recurrence at iteration {iter}"
                )));
            }
            let pnorm = (betal * betal + alfa * alfa + betan * betan).sqrt();
            anorm_est = anorm_est.max(pnorm);
            let nrm = fixed_norm.unwrap_or(anorm_est);
            let cutoff = (DEFAULT_RANK_TOL * nrm).max(f64::MIN_POSITIVE);

            // previous left reflection
            let dbar = dltan;
            let mut dlta = cs * dbar + sn * alfa;
            let gbar = sn * dbar - cs * alfa;
            let eplnn = sn * betan;
            dltan = -cs * betan;

            // current left reflection
            let gamal2 = gamal;
            gamal = gama;
            (cs, sn, gama) = sym_givens(gbar, betan);
            let taul2 = taul;
            taul = tau;
            tau = cs * phi;
            phi *= sn;

            // previous right reflection
            if iter > 2 {
                veplnl2 = veplnl;
                etal2 = etal;
                etal = eta;
                let dlta_tmp = sr2 * vepln - cr2 * dlta;
                veplnl = cr2 * vepln + sr2 * dlta;
                dlta = dlta_tmp;
                eta = sr2 * gama;
                gama *= -cr2;
            }

            // current right reflection
            if iter > 1 {
                (cr1, sr1, gamal) = sym_givens(gamal, dlta);
                vepln = sr1 * gama;
                gama *= -cr1;
            }

            // solution coordinates
            let ul4 = ul3;
            ul3 = ul2;
            // coordinates on numerically zero diagonal entries of L are dropped
            let solve = |num: f64, diag: f64| {
                if diag.abs() <= cutoff {
                    0.0
                } else {
                    num / diag
                }
            };
            if iter > 2 {
                ul2 = solve(taul2 - etal2 * ul4 - veplnl2 * ul3, gamal2);
            }
            if iter > 1 {
                ul = solve(taul - etal * ul3 - veplnl * ul2, gamal);
            }
            let singular = gama.abs() <= cutoff;
            let u = if singular {
                0.0
            } else {
                (tau - eta * ul2 - vepln * ul) / gama
            };
            if !singular {
                rnorm = phi.abs();
            }

            // QLP update of the solution
            let wl2: ParamVector;
            if iter == 1 {
                wl2 = wl;
                wl = &v * sr1;
                w = &v * (-cr1);
            } else if iter == 2 {
                wl2 = wl;
                wl = &w * cr1 + &v * sr1;
                w = &w * sr1 - &v * cr1;
            } else {
                let old_wl = wl;
                wl = w;
                w = &old_wl * sr2 - &v * cr2;
                wl2 = &old_wl * cr2 + &v * sr2;
                v = &wl * cr1 + &w * sr1;
                w = &wl * sr1 - &w * cr1;
                wl = v;
            }
            xl2.axpy(ul2, &wl2, 1.0);
            let x_prev = std::mem::replace(&mut x, &xl2 + &wl * ul + &w * u);

            // next right reflection
            let gamal_prev = gamal;
            (cr2, sr2, gamal) = sym_givens(gamal_prev, eplnn);

            anorm_est = anorm_est.max(gamal).max(gama.abs());
            let nrm = fixed_norm.unwrap_or(anorm_est);
            let xnorm = x.norm();
            if !xnorm.is_finite() {
                return Err(Error::KrylovNaN(format!("iterate at iteration {iter}")));
            }
            // no minimum-norm solution under the rank tolerance is longer
            // than this, so a longer iterate's small residual proves nothing
            let xnorm_cap = (n as f64).sqrt() * beta1 / (DEFAULT_RANK_TOL * nrm);
            if xnorm <= xnorm_cap && rnorm / (nrm * xnorm + beta1) <= rtol {
                stop = KrylovStop::Residual;
                break;
            }
            if betan <= BREAKDOWN_TOL * nrm {
                stop = KrylovStop::Breakdown;
                break;
            }
            // co-kernel residual of the previous iterate. The current one is
            // shorter and in exact arithmetic just as good; without a stored
            // basis it is checked explicitly, since a drifting Lanczos basis
            // can spoil it.
            if gbar.hypot(dltan) / nrm <= rtol {
                if basis.is_empty() {
                    let res = op.apply(&x) + g;
                    let res_norm = res.norm();
                    if res_norm > 0.0 && cokernel_ratio(op.apply(&res).norm(), nrm, res_norm) > rtol
                    {
                        x = x_prev;
                    }
                }
                stop = KrylovStop::CokernelResidual;
                break;
            }
        }
        if !basis.is_empty() {
            x = subspace_min_norm(&basis, &images, &b)?;
        }
    } else if beta1 == 0.0 {
        stop = KrylovStop::Residual;
    }

    let (h_norm, norm_convention) = match fixed_norm {
        Some(f) => (f, NormConvention::Frobenius),
        None => (anorm_est, NormConvention::LanczosEstimate),
    };
    let residual = op.apply(&x) + g;
    let res_norm = residual.norm();
    let rel_residual = residual_ratio(res_norm, h_norm, x.norm(), beta1);
    let cokernel_residual = if res_norm == 0.0 {
        0.0
    } else {
        cokernel_ratio(op.apply(&residual).norm(), h_norm, res_norm)
    };
    if !rel_residual.is_finite() || !cokernel_residual.is_finite() {
        return Err(Error::KrylovNaN("final residuals".into()));
    }
    Ok(KrylovSolution {
        step: x,
        rel_residual,
        cokernel_residual,
        iterations,
        stop,
        h_norm,
        norm_convention,
    })
}
