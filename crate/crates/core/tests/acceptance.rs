//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! The tests hold a shared lock so that their wall-clock budgets are not
//! distorted by each other.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use flatscan_core::data::seeded_rng;
use flatscan_core::field::audit_derivatives;
use flatscan_core::linalg::{pinv_solve, sym_eig, DEFAULT_RANK_TOL};
use flatscan_core::models::{
    linear_ae_critical_points, Activation, LinearField, LossKind, NetworkField, NetworkSpec,
    QuadraticField, QuarticField,
};
use flatscan_core::pipeline::{Experiment, ExperimentConfig, ExperimentResults};
use flatscan_core::solvers::gradient_norm_min;
use flatscan_core::{
    cokernel_residual, mrqlp_solve, newton_mr, rayleigh_flatness, relative_residual,
    DenseSymMatrix, OutcomeClass, ParamVector, ScalarField, SolverConfig,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    // written to the raw handle so the line survives output capture
    let _ = writeln!(
        std::io::stderr(),
        "{name}: {verdict}: {detail} [{:.2} s]",
        elapsed.as_secs_f64()
    );
}

fn v(xs: &[f64]) -> ParamVector {
    DVector::from_column_slice(xs)
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load_config(name: &str, overrides: &[String]) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name), overrides).unwrap()
}

#[test]
fn quartic_basins() {
    let _guard = serial();
    let clock = Instant::now();
    let cfg = SolverConfig {
        outer_iters: 100,
        ..SolverConfig::default()
    };
    let axis: Vec<f64> = (0..10).map(|i| -4.0 + 8.0 * i as f64 / 9.0).collect();
    let (minimum, flat) = (v(&[-3.0, 0.0]), v(&[2f64.sqrt(), 0.0]));
    let (mut left, mut left_ok, mut right, mut right_ok) = (0, 0, 0, 0);
    for &x in &axis {
        for &y in &axis {
            let trace = newton_mr(&QuarticField, &v(&[x, y]), &cfg).unwrap();
            let sq = trace.terminal_row().sq_grad_norm;
            if x < -2f64.sqrt() {
                left += 1;
                if (&trace.terminal - &minimum).norm() < 1e-6 && sq < 1e-20 {
                    left_ok += 1;
                }
            } else {
                right += 1;
                if (&trace.terminal - &flat).norm() < 1e-3 && (9.0..=13.0).contains(&sq) {
                    right_ok += 1;
                }
            }
        }
    }
    let elapsed = clock.elapsed();
    let pass = left_ok == left && right_ok * 5 >= right * 4 && elapsed.as_secs_f64() < 5.0;
    report(
        "quartic basins",
        pass,
        &format!(
            "left basin {left_ok}/{left} at the minimum, right basin {right_ok}/{right} at the flat point (need 80%)"
        ),
        elapsed,
    );
    assert!(pass, "left {left_ok}/{left}, right {right_ok}/{right}");
}

fn random_system(seed: u64) -> (DenseSymMatrix, ParamVector, usize, usize) {
    let mut rng = seeded_rng(seed);
    let n = rng.random_range(10..=100usize);
    let deficiency = [0, n / 4, n / 2][(seed % 3) as usize];
    let rank = n - deficiency;
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = a.qr().q();
    let lambdas = DVector::from_fn(n, |i, _| {
        if i < rank {
            let mag = rng.random_range(0.5..2.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        } else {
            0.0
        }
    });
    let h = &q * DMatrix::from_diagonal(&lambdas) * q.transpose();
    let h = DenseSymMatrix::new((&h + h.transpose()) * 0.5).unwrap();
    let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (h, g, n, rank)
}

#[test]
fn krylov_matches_pseudoinverse() {
    let _guard = serial();
    let clock = Instant::now();
    let (mut step_fail, mut resid_fail) = (0, 0);
    let (mut worst_step, mut worst_resid) = (0f64, 0f64);
    for k in 0..200u64 {
        let (h, g, n, _) = random_system(1000 + k);
        let cfg = SolverConfig {
            rtol: 1e-12,
            maxit: Some(n),
            ..SolverConfig::default()
        };
        let sol = mrqlp_solve(&h, &g, &cfg).unwrap();
        let oracle = -pinv_solve(&h, &g, DEFAULT_RANK_TOL).unwrap();
        let err = (&sol.step - &oracle).norm() / oracle.norm();
        worst_step = worst_step.max(err);
        if !(err <= 1e-6) {
            step_fail += 1;
        }
        let dr = (sol.rel_residual - relative_residual(&h, &sol.step, &g)).abs();
        let dh = (sol.cokernel_residual - cokernel_residual(&h, &sol.step, &g)).abs();
        worst_resid = worst_resid.max(dr).max(dh);
        if !(dr <= 1e-10 && dh <= 1e-10) {
            resid_fail += 1;
        }
    }
    let elapsed = clock.elapsed();
    let pass = step_fail == 0 && resid_fail == 0 && elapsed.as_secs_f64() < 30.0;
    report(
        "krylov vs pseudoinverse",
        pass,
        &format!(
            "{step_fail} step mismatches (worst {worst_step:.1e}), {resid_fail} residual mismatches (worst {worst_resid:.1e}) over 200 systems"
        ),
        elapsed,
    );
    assert!(pass);
}

/// A run converges supralinearly at the end when its smallest squared
/// gradient norm is at least 1e4 times below a value at most 3 steps earlier.
fn has_fast_final_phase(sq: &[f64]) -> bool {
    let t = (0..sq.len())
        .min_by(|&a, &b| sq[a].total_cmp(&sq[b]))
        .unwrap();
    (1..=3.min(t)).any(|k| sq[t - k] >= 1e4 * sq[t])
}

#[test]
fn linear_autoencoder_ground_truth() {
    let _guard = serial();
    let clock = Instant::now();
    let exp = Experiment::new(load_config("linear_ae.json", &[])).unwrap();
    let cov = exp.dataset.as_ref().unwrap().input_covariance();
    let eigenvalues: Vec<f64> = sym_eig(&cov).unwrap().eigenvalues.iter().copied().collect();
    let records = linear_ae_critical_points(&eigenvalues, 3).unwrap();
    let results = exp.run().unwrap();

    let (mut converged, mut matched, mut fast) = (0, 0, 0);
    for run in &results.runs {
        let trace = run.trace.as_ref().expect("run failed");
        let outcome = run.outcome.as_ref().unwrap();
        if !trace.rows.iter().any(|r| r.sq_grad_norm < 1e-10) {
            continue;
        }
        converged += 1;
        if records
            .iter()
            .any(|c| c.matches(outcome.terminal_loss, outcome.morse_index, 1e-5))
        {
            matched += 1;
        }
        let sq: Vec<f64> = trace.rows.iter().map(|r| r.sq_grad_norm).collect();
        if has_fast_final_phase(&sq) {
            fast += 1;
        }
    }
    let elapsed = clock.elapsed();
    let pass = converged > 0
        && matched == converged
        && fast * 10 >= converged * 9
        && elapsed.as_secs_f64() < 120.0;
    report(
        "linear autoencoder ground truth",
        pass,
        &format!(
            "{converged}/50 runs below 1e-10; {matched} match an analytic critical point; {fast} show a fast final phase"
        ),
        elapsed,
    );
    assert!(pass);
}

struct SwishRun {
    results: ExperimentResults,
    dir: PathBuf,
    elapsed: Duration,
    _tmp: tempfile::TempDir,
}

fn swish_into(dir: PathBuf) -> (ExperimentResults, PathBuf) {
    let cfg = load_config("swish_ae.json", &[format!("output_dir={}", dir.display())]);
    (Experiment::new(cfg).unwrap().run().unwrap(), dir)
}

fn swish_reference() -> &'static SwishRun {
    static RUN: OnceLock<SwishRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let clock = Instant::now();
        let (results, dir) = swish_into(tmp.path().join("out"));
        SwishRun {
            results,
            dir,
            elapsed: clock.elapsed(),
            _tmp: tmp,
        }
    })
}

#[test]
fn flatness_prevalence() {
    let _guard = serial();
    let run = swish_reference();
    let results = &run.results;
    let outcomes = results.outcomes();
    let params = results.manifest.num_params;
    let high_r = outcomes
        .iter()
        .filter(|(_, o)| o.max_r_over_run.is_some_and(|r| r > 0.9))
        .count();
    let flat = outcomes
        .iter()
        .filter(|(_, o)| o.class == OutcomeClass::GradientFlat && o.terminal_sq_grad_norm > 1e-10)
        .count();
    let mut classes: BTreeMap<OutcomeClass, usize> = BTreeMap::new();
    for (_, o) in &outcomes {
        *classes.entry(o.class).or_default() += 1;
    }
    let pass = params <= 300
        && outcomes.len() == 50
        && high_r * 2 >= outcomes.len()
        && flat >= 1
        && classes.len() >= 2
        && run.elapsed.as_secs_f64() < 900.0;
    report(
        "nonlinear flatness prevalence",
        pass,
        &format!(
            "{params} parameters; {high_r}/50 runs reach r > 0.9; {flat} end gradient-flat off criticality; classes {classes:?}"
        ),
        run.elapsed,
    );
    assert!(pass);
}

#[test]
fn exact_flatness_agreement() {
    let _guard = serial();
    let clock = Instant::now();
    let q = QuarticField;
    let theta = v(&[2f64.sqrt(), 0.0]);
    let g = q.gradient(&theta);
    let sol = mrqlp_solve(&q.hessian(&theta), &g, &SolverConfig::default()).unwrap();
    let rayleigh = rayleigh_flatness(&q, &theta).unwrap().abs();
    let gnm = gradient_norm_min(&q, &theta, 1e-2, 1).unwrap();
    let moved = (&gnm.terminal - &theta).norm();
    let elapsed = clock.elapsed();
    let pass = sol.step.norm() == 0.0
        && sol.rel_residual == 1.0
        && sol.cokernel_residual < 1e-12
        && rayleigh < 1e-12
        && moved < 1e-12
        && elapsed.as_secs_f64() < 1.0;
    report(
        "exact flatness agreement",
        pass,
        &format!(
            "|p| = {:.1e}, r = {}, r_H = {:.1e}, rayleigh = {rayleigh:.1e}, gradient-norm step {moved:.1e}",
            sol.step.norm(),
            sol.rel_residual,
            sol.cokernel_residual
        ),
        elapsed,
    );
    assert!(pass);
}

fn shipped_fields() -> Vec<Box<dyn ScalarField>> {
    let mut rng = seeded_rng(77);
    let mut normal =
        |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = normal(5, 5);
    let quad = QuadraticField::with_linear(
        DenseSymMatrix::new(&a + a.transpose()).unwrap(),
        DVector::from_column_slice(normal(5, 1).as_slice()),
    );
    let lin = LinearField::new(DVector::from_column_slice(normal(4, 1).as_slice()), 1.5);
    let x = normal(4, 12);
    let labels = DMatrix::from_fn(3, 12, |i, j| if j % 3 == i { 1.0 } else { 0.0 });
    let net = |widths: Vec<usize>, activation, biases, loss_kind, l2| NetworkSpec {
        layer_widths: widths,
        activation,
        use_biases: biases,
        loss_kind,
        l2_coeff: l2,
    };
    let mut fields: Vec<Box<dyn ScalarField>> =
        vec![Box::new(QuarticField), Box::new(quad), Box::new(lin)];
    for (spec, y) in [
        (
            net(
                vec![4, 3, 4],
                Activation::Identity,
                false,
                LossKind::Mse,
                0.0,
            ),
            x.clone(),
        ),
        (
            net(
                vec![4, 5, 3, 4],
                Activation::Swish,
                true,
                LossKind::Mse,
                1e-2,
            ),
            x.clone(),
        ),
        (
            net(
                vec![4, 6, 3, 3],
                Activation::Swish,
                true,
                LossKind::CrossEntropy,
                1e-3,
            ),
            labels.clone(),
        ),
        (
            net(
                vec![4, 5, 3],
                Activation::Swish,
                false,
                LossKind::CrossEntropy,
                0.0,
            ),
            labels,
        ),
    ] {
        fields.push(Box::new(
            NetworkField::from_columns(spec, x.clone(), y).unwrap(),
        ));
    }
    fields
}

#[test]
fn derivative_oracles() {
    let _guard = serial();
    let clock = Instant::now();
    let mut rng = seeded_rng(2024);
    let mut worst = 0f64;
    let mut failures = Vec::new();
    let fields = shipped_fields();
    for field in &fields {
        let n = field.dim();
        for k in 0..20 {
            let theta = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
            let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let audit = audit_derivatives(field.as_ref(), &theta, &dir);
            let e = audit.gradient_rel_error.max(audit.hvp_rel_error);
            worst = worst.max(e);
            if !(e < 1e-5) {
                failures.push(format!("{} point {k}: {e:.1e}", field.name()));
            }
        }
    }
    let elapsed = clock.elapsed();
    let pass = failures.is_empty() && elapsed.as_secs_f64() < 60.0;
    report(
        "derivative oracles",
        pass,
        &format!(
            "{} fields x 20 points, worst relative error {worst:.1e}",
            fields.len()
        ),
        elapsed,
    );
    assert!(pass, "{failures:?}");
}

fn sorted_outcomes(results: &ExperimentResults) -> Vec<String> {
    let mut all: Vec<String> = results
        .outcomes()
        .iter()
        .map(|(_, o)| serde_json::to_string(o).unwrap())
        .collect();
    all.sort();
    all
}

#[test]
fn determinism() {
    let _guard = serial();
    let first = swish_reference();
    let clock = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let (second, dir) = swish_into(tmp.path().join("out"));
    let same_outcomes = sorted_outcomes(&first.results) == sorted_outcomes(&second);
    let mut differing = Vec::new();
    for id in 0..first.results.runs.len() {
        let rel = format!("runs/{id}/trace.csv");
        let a = std::fs::read(first.dir.join(&rel)).unwrap();
        let b = std::fs::read(dir.join(&rel)).unwrap();
        if a != b {
            differing.push(rel);
        }
    }
    let elapsed = clock.elapsed();
    let pass = same_outcomes && differing.is_empty();
    report(
        "determinism",
        pass,
        &format!(
            "outcome multisets identical: {}; {} of {} trace files differ",
            same_outcomes,
            differing.len(),
            first.results.runs.len()
        ),
        elapsed,
    );
    assert!(pass, "{differing:?}");
}
