use crate::error::{invalid, Result};
use crate::{CMatrix, Complex64};

/// `⟨‖y - A x‖²⟩` for independent random `y`, `A` (independent columns) and
/// `x`:
///
/// `‖⟨y⟩ - ⟨A⟩⟨x⟩‖² + ⟨x⟩^H B ⟨x⟩ + Tr Σ_y + Tr(Σ_x B) + Tr(Σ_x ⟨A⟩^H ⟨A⟩)`
///
/// with `B = diag(Tr Σ_{a_1}, ..)`. `y_var_total` is `Tr Σ_y`, `a_covs` the
/// column covariances and `x_var` the diagonal of `Σ_x`.
pub fn expected_residual(
    y_mean: &[Complex64],
    y_var_total: f64,
    a_mean: &CMatrix,
    a_covs: &[CMatrix],
    x_mean: &[Complex64],
    x_var: &[f64],
) -> Result<f64> {
    let (n, k) = a_mean.shape();
    if y_mean.len() != n || a_covs.len() != k || x_mean.len() != k || x_var.len() != k {
        return invalid("expected_residual: inconsistent shapes");
    }
    if !(y_var_total >= 0.0) || x_var.iter().any(|v| !(*v >= 0.0)) {
        return invalid("expected_residual: negative variance");
    }
    let mut traces = Vec::with_capacity(k);
    for c in a_covs {
        if c.shape() != (n, n) {
            return invalid("expected_residual: column covariance has the wrong size");
        }
        let tr: f64 = (0..n).map(|d| c[(d, d)].re).sum();
        if (0..n).any(|d| c[(d, d)].re < 0.0) {
            return invalid("expected_residual: negative variance");
        }
        traces.push(tr);
    }
    let mut total = y_var_total;
    for r in 0..n {
        let mut pred = Complex64::new(0.0, 0.0);
        for j in 0..k {
            pred += a_mean[(r, j)] * x_mean[j];
        }
        total += (y_mean[r] - pred).norm_sqr();
    }
    for j in 0..k {
        let col_energy = a_mean.column(j).norm_squared();
        total += (x_mean[j].norm_sqr() + x_var[j]) * traces[j] + x_var[j] * col_energy;
    }
    Ok(total)
}
