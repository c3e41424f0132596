use nalgebra::DVector;

use crate::field::ScalarField;
use crate::linalg::{DenseSymMatrix, ParamVector};

/// `f(θ) = ½θᵀAθ + bᵀθ`, constant Hessian `A`.
#[derive(Debug, Clone)]
pub struct QuadraticField {
    a: DenseSymMatrix,
    b: ParamVector,
}

impl QuadraticField {
    pub fn new(a: DenseSymMatrix) -> Self {
        let n = a.dim();
        Self {
            a,
            b: DVector::zeros(n),
        }
    }

    pub fn with_linear(a: DenseSymMatrix, b: ParamVector) -> Self {
        assert_eq!(a.dim(), b.len(), "linear term dimension");
        Self { a, b }
    }

    pub fn matrix(&self) -> &DenseSymMatrix {
        &self.a
    }
}

impl ScalarField for QuadraticField {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn value(&self, theta: &ParamVector) -> f64 {
        0.5 * theta.dot(&self.a.mul_vec(theta)) + self.b.dot(theta)
    }

    fn gradient(&self, theta: &ParamVector) -> ParamVector {
        self.a.mul_vec(theta) + &self.b
    }

    fn hvp(&self, _theta: &ParamVector, v: &ParamVector) -> ParamVector {
        self.a.mul_vec(v)
    }

    fn hessian(&self, _theta: &ParamVector) -> DenseSymMatrix {
        self.a.clone()
    }

    fn name(&self) -> String {
        "quadratic".to_string()
    }
}

/// `f(θ) = cᵀθ + c₀`.
#[derive(Debug, Clone)]
pub struct LinearField {
    coef: ParamVector,
    offset: f64,
}

impl LinearField {
    pub fn new(coef: ParamVector, offset: f64) -> Self {
        Self { coef, offset }
    }
}

impl ScalarField for LinearField {
    fn dim(&self) -> usize {
        self.coef.len()
    }

    fn value(&self, theta: &ParamVector) -> f64 {
        self.coef.dot(theta) + self.offset
    }

    fn gradient(&self, _theta: &ParamVector) -> ParamVector {
        self.coef.clone()
    }

    fn hvp(&self, _theta: &ParamVector, _v: &ParamVector) -> ParamVector {
        DVector::zeros(self.coef.len())
    }

    fn hessian(&self, _theta: &ParamVector) -> DenseSymMatrix {
        DenseSymMatrix::zeros(self.coef.len())
    }

    fn name(&self) -> String {
        "linear".to_string()
    }
}
