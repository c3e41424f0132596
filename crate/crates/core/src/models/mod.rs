//! The objective zoo.

mod activation;
mod linear_ae;
mod network;
mod quartic;
mod simple;

pub use activation::{swish, swish_prime, swish_second, Activation};
pub use linear_ae::{
    diagonal_covariance_field, linear_ae_critical_points, linear_ae_spec, CriticalPointRecord,
    Provenance,
};
pub use network::{init_params, LossKind, NetworkField, NetworkSpec};
pub use quartic::{quartic_field, QuarticField};
pub use simple::{LinearField, QuadraticField};
