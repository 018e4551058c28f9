//! Coordinate-ascent variational inference for joint channel estimation and
//! data detection.
//!
//! [`VariationalState`] holds every factor of the mean-field posterior and
//! exposes the individual CAVI updates; [`run_vb_pfl`], [`run_vb_qe`] and
//! [`run_vb_eq`] sequence them for the three fronthaul scenarios.

mod algorithms;
mod residual;
mod state;

pub use algorithms::{
    eq_channel_quantizers, quantize_received, received_scales, run_local_ap_ce, run_vb_eq,
    run_vb_eq_cpu, run_vb_pfl, run_vb_qe, LocalEstimate, VbOutput,
};
pub(crate) use algorithms::hcat;
pub use residual::expected_residual;
pub use state::{gamma_mean, hard_decision, symbol_posterior, VariationalState, GAMMA_DENOM_FLOOR};

use serde::{Deserialize, Serialize};

/// Shape/rate hyperparameters of the Gamma priors on the residual precisions.
/// All zeros gives the EM-style precision estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaHyper {
    pub a_p: f64,
    pub b_p: f64,
    pub a_d: f64,
    pub b_d: f64,
}

impl GammaHyper {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [("a_p", self.a_p), ("b_p", self.b_p), ("a_d", self.a_d), ("b_d", self.b_d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return crate::error::invalid(format!("gamma hyperparameter {name} = {v} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Engine switches that are not part of the signal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbOptions {
    /// Stop once the largest change of a symbol mean in a sweep is below this
    /// (0 runs every iteration).
    pub early_exit_tol: f64,
    /// Add the variances of the latent received signals to the precision
    /// residuals in the quantized scenarios.
    pub include_tau_r: bool,
    /// Add the other APs' residuals to the channel-mean numerator.
    pub cross_ap_terms: bool,
    /// Initial symbol variance `τ^x` of the unknown data symbols (their
    /// initial mean is zero).
    pub init_symbol_var: f64,
}

impl Default for VbOptions {
    fn default() -> Self {
        Self { early_exit_tol: 0.0, include_tau_r: true, cross_ap_terms: false, init_symbol_var: 1.0 }
    }
}

impl VbOptions {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.early_exit_tol >= 0.0) || !(self.init_symbol_var >= 0.0 && self.init_symbol_var.is_finite()) {
            return crate::error::invalid("vb options must be non-negative");
        }
        Ok(())
    }
}
