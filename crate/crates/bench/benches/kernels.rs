use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use flatscan_core::data::gaussian_dataset;
use flatscan_core::models::{
    init_params, linear_ae_spec, Activation, LossKind, NetworkField, NetworkSpec,
};
use flatscan_core::{mrqlp_solve, newton_mr, ScalarField, SolverConfig};

fn linear_ae() -> (NetworkField, flatscan_core::ParamVector) {
    let data = gaussian_dataset(128, 8, 0).unwrap();
    let spec = linear_ae_spec(8, 3);
    let theta = init_params(&spec, 1);
    (NetworkField::new(spec, &data).unwrap(), theta)
}

fn swish_ae() -> (NetworkField, flatscan_core::ParamVector) {
    let data = gaussian_dataset(200, 8, 0).unwrap();
    let spec = NetworkSpec {
        layer_widths: vec![8, 4, 8, 8],
        activation: Activation::Swish,
        use_biases: true,
        loss_kind: LossKind::Mse,
        l2_coeff: 0.0,
    };
    let theta = init_params(&spec, 1);
    (NetworkField::new(spec, &data).unwrap(), theta)
}

fn derivatives(c: &mut Criterion) {
    for (name, (field, theta)) in [("linear_ae", linear_ae()), ("swish_ae", swish_ae())] {
        let v = field.gradient(&theta);
        c.bench_function(&format!("{name}/gradient"), |b| {
            b.iter(|| field.gradient(black_box(&theta)))
        });
        c.bench_function(&format!("{name}/hvp"), |b| {
            b.iter(|| field.hvp(black_box(&theta), &v))
        });
        c.bench_function(&format!("{name}/hessian"), |b| {
            b.iter(|| field.hessian(black_box(&theta)))
        });
    }
}

fn krylov(c: &mut Criterion) {
    for (name, (field, theta)) in [("linear_ae", linear_ae()), ("swish_ae", swish_ae())] {
        let h = field.hessian(&theta);
        let g = field.gradient(&theta);
        let cfg = SolverConfig::default();
        c.bench_function(&format!("{name}/mrqlp"), |b| {
            b.iter(|| mrqlp_solve(black_box(&h), black_box(&g), &cfg).unwrap())
        });
    }
}

fn newton_step(c: &mut Criterion) {
    for (name, (field, theta)) in [("linear_ae", linear_ae()), ("swish_ae", swish_ae())] {
        let cfg = SolverConfig {
            outer_iters: 1,
            ..SolverConfig::default()
        };
        c.bench_function(&format!("{name}/newton_mr_step"), |b| {
            b.iter(|| newton_mr(&field, black_box(&theta), &cfg).unwrap())
        });
    }
}

criterion_group!(benches, derivatives, krylov, newton_step);
criterion_main!(benches);
