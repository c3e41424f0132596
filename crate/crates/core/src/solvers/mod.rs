//! Critical-point finders and the pretraining loop that feeds them.

mod config;
mod damped_newton;
mod first_order;
mod krylov;
mod line_search;
mod newton_mr;
mod trace;

pub use config::{HessianMode, SolverConfig};
pub use damped_newton::damped_newton;
pub use first_order::{gradient_norm_min, train_gd_momentum, DIVERGENCE_LIMIT};
pub use krylov::{mrqlp_solve, HessianOperator, KrylovSolution, KrylovStop, SymmetricOperator};
pub use line_search::{backtracking_line_search, sq_grad_merit};
pub use newton_mr::newton_mr;
pub use trace::{
    read_rows, read_trace_csv, write_rows, IterateTrace, Snapshot, Termination, TraceRow,
};
