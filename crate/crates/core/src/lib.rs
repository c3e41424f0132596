//! Finding critical points of neural-network losses, and telling them apart
//! from gradient-flat regions where second-order methods stall.
//!
//! The crate is organized bottom-up: [`linalg`] and [`field`] provide dense
//! kernels and the objective abstraction, [`models`] and [`data`] build
//! objectives, [`solvers`] runs MINRES-QLP and Newton-MR on them,
//! [`diagnostics`] classifies what the solvers found, and [`pipeline`] drives
//! whole experiments.

pub mod data;
pub mod diagnostics;
mod error;
pub mod field;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod solvers;

pub use diagnostics::{
    classify_outcome, cokernel_residual, morse_index, rayleigh_flatness, relative_residual,
    Cutoffs, FlatnessReport, OutcomeClass, RunOutcome,
};
pub use error::{Error, Result};
pub use field::ScalarField;
pub use linalg::{sym_eig, DenseSymMatrix, ParamVector, Spectrum};
pub use solvers::{mrqlp_solve, newton_mr, IterateTrace, KrylovSolution, SolverConfig, TraceRow};
