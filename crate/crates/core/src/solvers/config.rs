use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the Newton system sees the Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Materialize `∇²f` once per iteration; residuals use `‖H‖_F`.
    #[default]
    Dense,
    /// Matrix-free Hessian-vector products; residuals use a Lanczos estimate
    /// of the norm.
    Operator,
}

/// Knobs shared by the second-order critical-point finders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Inner Krylov tolerance on either residual.
    pub rtol: f64,
    /// Inner Krylov iteration cap; `None` means the problem dimension.
    pub maxit: Option<usize>,
    /// First trial step after the unit step is rejected.
    pub alpha0: f64,
    /// Backtracking factor.
    pub beta: f64,
    /// Armijo constant for backtracked steps.
    pub rho: f64,
    /// Armijo constant for the unit step.
    pub rho_unit: f64,
    pub max_backtracks: usize,
    pub outer_iters: usize,
    /// Stop once `‖∇f‖²` falls to this value.
    pub grad_tol_sq: f64,
    /// Consecutive zero-step iterations after which a run is declared stalled.
    pub stall_limit: usize,
    pub hessian_mode: HessianMode,
    /// Keep the Lanczos basis orthogonal to working precision. Costs one
    /// stored vector per Krylov iteration.
    pub reorthogonalize: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rtol: 5e-4,
            maxit: None,
            alpha0: 0.1,
            beta: 0.5,
            rho: 0.1,
            rho_unit: 0.5,
            max_backtracks: 40,
            outer_iters: 500,
            grad_tol_sq: 1e-30,
            stall_limit: 25,
            hessian_mode: HessianMode::Dense,
            reorthogonalize: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.rtol >= 0.0 && self.rtol.is_finite()) {
            return bad("rtol must be a finite non-negative number");
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return bad("alpha0 must be positive");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.rho_unit > 0.0 && self.rho_unit < 1.0) {
            return bad("Armijo constants must lie in (0, 1)");
        }
        if !(self.grad_tol_sq >= 0.0) {
            return bad("grad_tol_sq must be non-negative");
        }
        if self.stall_limit == 0 {
            return bad("stall_limit must be at least 1");
        }
        Ok(())
    }

    pub(crate) fn krylov_maxit(&self, n: usize) -> usize {
        self.maxit.unwrap_or(n)
    }
}
