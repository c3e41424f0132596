use serde::{Deserialize, Serialize};

/// Hidden-layer nonlinearity. Output layers are always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Swish,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Swish => swish(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Swish => swish_prime(x),
        }
    }

    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 0.0,
            Activation::Swish => swish_second(x),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x·σ(x)`.
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `σ(x)·(1 + x(1 − σ(x)))`.
pub fn swish_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `σ(x)(1 − σ(x))·(2 + x(1 − 2σ(x)))`.
pub fn swish_second(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}
