//! Dense symmetric kernels: eigendecomposition, norms and a pseudoinverse
//! least-squares oracle.
//!
//! Matrices here are small enough (n up to a few thousand) to be stored
//! densely. Symmetry is enforced once, at construction, by averaging the
//! input with its transpose.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Flat vector of objective parameters.
pub type ParamVector = DVector<f64>;

/// Default relative cutoff below which singular values are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// A finite, exactly symmetric dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSymMatrix {
    entries: DMatrix<f64>,
}

impl DenseSymMatrix {
    /// Builds a symmetric matrix from `m`, replacing it with `(m + mᵀ) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "square matrix",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        let mut entries = m;
        let n = entries.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (entries[(i, j)] + entries[(j, i)]);
                entries[(i, j)] = avg;
                entries[(j, i)] = avg;
            }
        }
        Ok(Self { entries })
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.entries * v
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    /// Returns `self + shift·I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut entries = self.entries.clone();
        for i in 0..entries.nrows() {
            entries[(i, i)] += shift;
        }
        Self { entries }
    }

    /// Returns `c·self`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            entries: &self.entries * c,
        }
    }
}

/// Full eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues in ascending order.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors, one per column, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Largest eigenvalue magnitude, which for symmetric matrices is the
    /// spectral norm.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues
            .iter()
            .fold(0.0_f64, |acc, l| acc.max(l.abs()))
    }

    /// Rebuilds `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let scaled = v * DMatrix::from_diagonal(&self.eigenvalues);
        scaled * v.transpose()
    }
}

/// Symmetric eigendecomposition, eigenvalues sorted ascending.
pub fn sym_eig(m: &DenseSymMatrix) -> Result<Spectrum> {
    let n = m.dim();
    if n == 0 {
        return Ok(Spectrum {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let max_iterations = 100 * n.max(10);
    let eig = SymmetricEigen::try_new(m.as_matrix().clone(), f64::EPSILON, max_iterations).ok_or(
        Error::EigenNoConvergence {
            iterations: max_iterations,
        },
    )?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Minimum-norm least-squares solution `M⁺b`.
///
/// Eigenvalues with magnitude at or below `rank_tol·σ_max` are treated as
/// zero, so their eigenvector components of `b` are dropped.
pub fn pinv_solve(m: &DenseSymMatrix, b: &ParamVector, rank_tol: f64) -> Result<ParamVector> {
    if m.dim() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "pinv_solve right-hand side",
            expected: m.dim(),
            found: b.len(),
        });
    }
    if !(rank_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rank_tol must be nonnegative, got {rank_tol}"
        )));
    }
    let spectrum = sym_eig(m)?;
    Ok(pinv_apply(&spectrum, b, rank_tol))
}

/// Applies the pseudoinverse described by an existing spectrum.
pub fn pinv_apply(spectrum: &Spectrum, b: &ParamVector, rank_tol: f64) -> ParamVector {
    let cutoff = rank_tol * spectrum.spectral_norm();
    let v = &spectrum.eigenvectors;
    let coeffs = v.tr_mul(b);
    let mut x = DVector::zeros(b.len());
    for (i, &lambda) in spectrum.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff && lambda != 0.0 {
            x.axpy(coeffs[i] / lambda, &v.column(i), 1.0);
        }
    }
    x
}

/// `√(Σ M_ij²)`.
pub fn frobenius_norm(m: &DenseSymMatrix) -> f64 {
    m.as_matrix().norm()
}
