//! Small dense complex helpers on top of `nalgebra`.

use crate::error::{Error, Result};
use crate::{CMatrix, Complex64};
use nalgebra::{DVector, SymmetricEigen};

/// Eigen-decomposition `Σ = U diag(λ) U^H` of a Hermitian PSD matrix, kept
/// so that posterior covariances `[c I + Σ^{-1}]^{-1}` and square roots can be
/// formed without explicit inversion.
#[derive(Debug, Clone)]
pub struct HermitianFactor {
    matrix: CMatrix,
    vectors: CMatrix,
    values: Vec<f64>,
}

/// Eigenvalues below this are treated as numerically negative.
pub const PSD_TOL: f64 = 1e-10;

impl HermitianFactor {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidParameter("covariance must be square".into()));
        }
        let n = matrix.nrows();
        for r in 0..n {
            for c in 0..n {
                let d = matrix[(r, c)] - matrix[(c, r)].conj();
                if d.norm() > 1e-9 * (1.0 + matrix[(r, c)].norm()) {
                    return Err(Error::Numeric("covariance is not Hermitian".into()));
                }
            }
        }
        let eig = SymmetricEigen::new(hermitian_part(&matrix));
        let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("eigen-decomposition produced non-finite values".into()));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOL {
            return Err(Error::Numeric(format!(
                "covariance is not positive semi-definite (min eigenvalue {min:e})"
            )));
        }
        let values = values.into_iter().map(|v| v.max(0.0)).collect();
        Ok(Self { matrix, vectors: eig.eigenvectors, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|k| self.matrix[(k, k)].re).sum()
    }

    /// `U diag(f(λ)) U^H`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.dim();
        let d: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = CMatrix::zeros(n, n);
        for c in 0..n {
            for r in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += self.vectors[(r, k)] * d[k] * self.vectors[(c, k)].conj();
                }
                out[(r, c)] = acc;
            }
        }
        out
    }

    pub fn sqrt(&self) -> CMatrix {
        self.spectral_map(f64::sqrt)
    }

    pub fn inverse(&self) -> Result<CMatrix> {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= 1e-14 * self.values.iter().copied().fold(0.0, f64::max).max(1.0) {
            return Err(Error::Numeric("covariance is singular".into()));
        }
        Ok(self.spectral_map(|l| 1.0 / l))
    }

    /// `[c I + Σ^{-1}]^{-1} = U diag(λ / (1 + c λ)) U^H`, valid for singular Σ.
    pub fn posterior_covariance(&self, precision_gain: f64) -> CMatrix {
        self.spectral_map(|l| l / (1.0 + precision_gain * l))
    }

    /// Trace of [`Self::posterior_covariance`].
    pub fn posterior_trace(&self, precision_gain: f64) -> f64 {
        self.values.iter().map(|&l| l / (1.0 + precision_gain * l)).sum()
    }
}

/// `(A + A^H) / 2`, exactly Hermitian.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    SymmetricEigen::new(hermitian_part(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn solve_hpd(a: CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

pub fn frobenius_sq(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn cvec(v: &[Complex64]) -> DVector<Complex64> {
    DVector::from_column_slice(v)
}
