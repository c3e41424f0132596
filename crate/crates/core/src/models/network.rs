//! Fully-connected networks with analytic gradients and Hessian-vector
//! products.
//!
//! Parameters are packed layer by layer: the weight matrix of layer `l`
//! (shape `out × in`, row-major) followed by its bias vector when biases are
//! enabled. Hidden layers apply the configured activation; the output layer
//! is linear. Losses are averaged over samples:
//!
//! * `mse`: `(1/m) Σᵢ ‖yᵢ − ŷᵢ‖²`, with targets defaulting to the inputs
//!   (autoencoding);
//! * `cross_entropy`: `(1/m) Σᵢ −Σₖ tᵢₖ log softmax(ŷᵢ)ₖ`.
//!
//! A positive `l2_coeff` adds `l2_coeff·‖θ‖²`.
//!
//! Hessian-vector products use a forward-mode pass over the reverse-mode
//! gradient, so no tape is needed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{seeded_rng, Dataset};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::{DenseSymMatrix, ParamVector};

use super::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub use_biases: bool,
    pub loss_kind: LossKind,
    #[serde(default)]
    pub l2_coeff: f64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::Config(format!(
                "network needs input, at least one hidden and an output width, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return Err(Error::Config(format!(
                "l2_coeff must be a nonnegative number, got {}",
                self.l2_coeff
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + if self.use_biases { w[1] } else { 0 })
            .sum()
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// Uniform `(−a, a)` initialization with `a = 1/√fan_in` per layer.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> ParamVector {
    let mut rng = seeded_rng(seed);
    let mut theta = Vec::with_capacity(spec.num_params());
    for w in spec.layer_widths.windows(2) {
        let a = 1.0 / (w[0] as f64).sqrt();
        let count = w[0] * w[1] + if spec.use_biases { w[1] } else { 0 };
        theta.extend((0..count).map(|_| rng.random_range(-a..a)));
    }
    DVector::from_vec(theta)
}

struct Layer {
    w: DMatrix<f64>,
    b: Option<DVector<f64>>,
}

/// Per-point quantities reused by every Hessian-vector product at that point.
struct Linearization {
    layers: Vec<Layer>,
    /// Pre-activations `Z_l`, l = 1..L.
    pre: Vec<DMatrix<f64>>,
    /// Post-activations `A_l`, l = 1..L−1 (hidden layers only).
    post: Vec<DMatrix<f64>>,
    /// `σ'(Z_l)` and `σ''(Z_l)` for hidden layers.
    d1: Vec<DMatrix<f64>>,
    d2: Vec<DMatrix<f64>>,
    /// `∂ℓ/∂Z_l`, l = 1..L.
    delta: Vec<DMatrix<f64>>,
    /// `∂ℓ/∂A_l` for hidden layers.
    dpost: Vec<DMatrix<f64>>,
    /// Softmax probabilities (cross-entropy only).
    probs: Option<DMatrix<f64>>,
}

/// Full-batch network loss over a fixed dataset.
#[derive(Debug, Clone)]
pub struct NetworkField {
    spec: NetworkSpec,
    /// d×m, one sample per column.
    x: DMatrix<f64>,
    /// c×m.
    y: DMatrix<f64>,
    /// Σₖ tᵢₖ per sample (cross-entropy).
    target_mass: DVector<f64>,
}

impl NetworkField {
    pub fn new(spec: NetworkSpec, data: &Dataset) -> Result<Self> {
        spec.validate()?;
        let x = data.inputs().transpose();
        let y = match (spec.loss_kind, data.targets()) {
            (_, Some(t)) => t.transpose(),
            (LossKind::Mse, None) => x.clone(),
            (LossKind::CrossEntropy, None) => return Err(Error::MissingTargets),
        };
        Self::from_columns(spec, x, y)
    }

    /// Builds the field from column-major sample matrices (d×m inputs, c×m
    /// targets).
    pub fn from_columns(spec: NetworkSpec, x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        spec.validate()?;
        if x.nrows() != spec.input_width() {
            return Err(Error::DimensionMismatch {
                context: "network input width",
                expected: spec.input_width(),
                found: x.nrows(),
            });
        }
        if y.nrows() != spec.output_width() {
            return Err(Error::DimensionMismatch {
                context: "network output width",
                expected: spec.output_width(),
                found: y.nrows(),
            });
        }
        if y.ncols() != x.ncols() || x.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                context: "network sample count",
                expected: x.ncols(),
                found: y.ncols(),
            });
        }
        let target_mass = DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.sum()));
        Ok(Self {
            spec,
            x,
            y,
            target_mass,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_samples(&self) -> usize {
        self.x.ncols()
    }

    fn unpack(&self, theta: &ParamVector) -> Vec<Layer> {
        assert_eq!(theta.len(), self.spec.num_params(), "parameter count");
        let mut off = 0;
        let mut layers = Vec::with_capacity(self.spec.num_layers());
        for w in self.spec.layer_widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = DMatrix::from_row_slice(
                fan_out,
                fan_in,
                &theta.as_slice()[off..off + fan_in * fan_out],
            );
            off += fan_in * fan_out;
            let b = if self.spec.use_biases {
                let b = DVector::from_column_slice(&theta.as_slice()[off..off + fan_out]);
                off += fan_out;
                Some(b)
            } else {
                None
            };
            layers.push(Layer { w: weights, b });
        }
        layers
    }

    fn pack(&self, dw: &[DMatrix<f64>], db: &[DVector<f64>]) -> ParamVector {
        let mut out = Vec::with_capacity(self.spec.num_params());
        for (l, w) in dw.iter().enumerate() {
            for i in 0..w.nrows() {
                out.extend(w.row(i).iter());
            }
            if self.spec.use_biases {
                out.extend(db[l].iter());
            }
        }
        DVector::from_vec(out)
    }

    fn affine(layer: &Layer, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &layer.w * input;
        if let Some(b) = &layer.b {
            for mut col in z.column_iter_mut() {
                col += b;
            }
        }
        z
    }

    /// Forward pass; returns hidden pre/post activations and the output.
    fn forward(&self, layers: &[Layer]) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let act = self.spec.activation;
        let mut pre = Vec::with_capacity(layers.len());
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(layers.len() - 1);
        for (l, layer) in layers.iter().enumerate() {
            let z = Self::affine(layer, if l == 0 { &self.x } else { &post[l - 1] });
            if l + 1 < layers.len() {
                post.push(z.map(|v| act.apply(v)));
            }
            pre.push(z);
        }
        (pre, post)
    }

    fn data_loss(&self, out: &DMatrix<f64>) -> f64 {
        let m = self.num_samples() as f64;
        match self.spec.loss_kind {
            LossKind::Mse => (out - &self.y).norm_squared() / m,
            LossKind::CrossEntropy => {
                let mut total = 0.0;
                for (j, col) in out.column_iter().enumerate() {
                    let lse = log_sum_exp(col.iter().copied());
                    let yj = self.y.column(j);
                    total += col
                        .iter()
                        .zip(yj.iter())
                        .map(|(z, t)| t * (lse - z))
                        .sum::<f64>();
                }
                total / m
            }
        }
    }

    /// `∂ℓ/∂Z_L`, plus softmax probabilities for cross-entropy.
    fn output_delta(&self, out: &DMatrix<f64>) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        let m = self.num_samples() as f64;
        match self.spec.loss_kind {
            LossKind::Mse => ((out - &self.y) * (2.0 / m), None),
            LossKind::CrossEntropy => {
                let probs = softmax_columns(out);
                let mut delta = probs.clone();
                for (j, mut col) in delta.column_iter_mut().enumerate() {
                    col *= self.target_mass[j];
                    col -= self.y.column(j);
                }
                (delta / m, Some(probs))
            }
        }
    }

    fn regularization(&self, theta: &ParamVector) -> f64 {
        if self.spec.l2_coeff > 0.0 {
            self.spec.l2_coeff * theta.norm_squared()
        } else {
            0.0
        }
    }

    fn linearize(&self, theta: &ParamVector) -> Linearization {
        let act = self.spec.activation;
        let layers = self.unpack(theta);
        let (pre, post) = self.forward(&layers);
        let hidden = layers.len() - 1;
        let d1: Vec<_> = pre[..hidden]
            .iter()
            .map(|z| z.map(|v| act.derivative(v)))
            .collect();
        let d2: Vec<_> = pre[..hidden]
            .iter()
            .map(|z| z.map(|v| act.second_derivative(v)))
            .collect();
        let (out_delta, probs) = self.output_delta(&pre[hidden]);

        let mut delta = vec![DMatrix::zeros(0, 0); layers.len()];
        let mut dpost = vec![DMatrix::zeros(0, 0); hidden];
        delta[hidden] = out_delta;
        for l in (1..layers.len()).rev() {
            let da = layers[l].w.tr_mul(&delta[l]);
            delta[l - 1] = da.component_mul(&d1[l - 1]);
            dpost[l - 1] = da;
        }
        Linearization {
            layers,
            pre,
            post,
            d1,
            d2,
            delta,
            dpost,
            probs,
        }
    }

    fn gradient_from(&self, lin: &Linearization, theta: &ParamVector) -> ParamVector {
        let mut dw = Vec::with_capacity(lin.layers.len());
        let mut db = Vec::with_capacity(lin.layers.len());
        for l in 0..lin.layers.len() {
            let input = if l == 0 { &self.x } else { &lin.post[l - 1] };
            dw.push(&lin.delta[l] * input.transpose());
            db.push(row_sums(&lin.delta[l]));
        }
        let mut g = self.pack(&dw, &db);
        if self.spec.l2_coeff > 0.0 {
            g.axpy(2.0 * self.spec.l2_coeff, theta, 1.0);
        }
        g
    }

    /// Directional derivative of the gradient along `v` at a linearized point.
    fn hvp_from(&self, lin: &Linearization, v: &ParamVector) -> ParamVector {
        let dir = self.unpack(v);
        let nl = lin.layers.len();
        let hidden = nl - 1;

        // tangent forward pass
        let mut rz: Vec<DMatrix<f64>> = Vec::with_capacity(nl);
        let mut ra: Vec<DMatrix<f64>> = Vec::with_capacity(hidden);
        for l in 0..nl {
            let input = if l == 0 { &self.x } else { &lin.post[l - 1] };
            let mut z = &dir[l].w * input;
            if l > 0 {
                z += &lin.layers[l].w * &ra[l - 1];
            }
            if let Some(b) = &dir[l].b {
                for mut col in z.column_iter_mut() {
                    col += b;
                }
            }
            if l < hidden {
                ra.push(z.component_mul(&lin.d1[l]));
            }
            rz.push(z);
        }

        // tangent of the output delta
        let m = self.num_samples() as f64;
        let mut rdelta = match self.spec.loss_kind {
            LossKind::Mse => &rz[hidden] * (2.0 / m),
            LossKind::CrossEntropy => {
                let probs = lin.probs.as_ref().expect("softmax cache");
                let mut out = DMatrix::zeros(probs.nrows(), probs.ncols());
                for j in 0..probs.ncols() {
                    let s = probs.column(j);
                    let u = rz[hidden].column(j);
                    let su = s.dot(&u);
                    let scale = self.target_mass[j] / m;
                    for k in 0..probs.nrows() {
                        out[(k, j)] = scale * s[k] * (u[k] - su);
                    }
                }
                out
            }
        };

        // tangent backward pass
        let mut dw = vec![DMatrix::zeros(0, 0); nl];
        let mut db = vec![DVector::zeros(0); nl];
        for l in (0..nl).rev() {
            let mut gw = if l == 0 {
                &rdelta * self.x.transpose()
            } else {
                &rdelta * lin.post[l - 1].transpose()
            };
            if l > 0 {
                gw += &lin.delta[l] * ra[l - 1].transpose();
            }
            db[l] = row_sums(&rdelta);
            dw[l] = gw;
            if l > 0 {
                let mut rda = lin.layers[l].w.tr_mul(&rdelta);
                rda += dir[l].w.tr_mul(&lin.delta[l]);
                let mut next = rda.component_mul(&lin.d1[l - 1]);
                next += lin.dpost[l - 1]
                    .component_mul(&lin.d2[l - 1])
                    .component_mul(&rz[l - 1]);
                rdelta = next;
            }
        }
        let mut hv = self.pack(&dw, &db);
        if self.spec.l2_coeff > 0.0 {
            hv.axpy(2.0 * self.spec.l2_coeff, v, 1.0);
        }
        hv
    }

    /// Network output for every sample (c×m).
    pub fn predict(&self, theta: &ParamVector) -> DMatrix<f64> {
        let layers = self.unpack(theta);
        let (mut pre, _) = self.forward(&layers);
        pre.pop().unwrap()
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_columns(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let total = col.sum();
        col /= total;
    }
    out
}

impl ScalarField for NetworkField {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn value(&self, theta: &ParamVector) -> f64 {
        let layers = self.unpack(theta);
        let (pre, _) = self.forward(&layers);
        self.data_loss(pre.last().unwrap()) + self.regularization(theta)
    }

    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        let lin = self.linearize(theta);
        self.gradient_from(&lin, theta)
    }

    fn value_and_gradient(&self, theta: &ParamVector) -> (f64, ParamVector) {
        let lin = self.linearize(theta);
        let value = self.data_loss(lin.pre.last().unwrap()) + self.regularization(theta);
        (value, self.gradient_from(&lin, theta))
    }

    fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> ParamVector {
        let lin = self.linearize(theta);
        self.hvp_from(&lin, v)
    }

    fn hessian(&self, theta: &ParamVector) -> DenseSymMatrix {
        let lin = self.linearize(theta);
        let n = self.dim();
        let mut cols = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for i in 0..n {
            e[i] = 1.0;
            cols.set_column(i, &self.hvp_from(&lin, &e));
            e[i] = 0.0;
        }
        DenseSymMatrix::new(cols).expect("finite network hessian")
    }

    fn name(&self) -> String {
        let s = &self.spec;
        format!(
            "network{:?}/{:?}/{:?}{}",
            s.layer_widths,
            s.activation,
            s.loss_kind,
            if s.use_biases { "/biases" } else { "" }
        )
    }
}
