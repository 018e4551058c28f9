//! Reference receivers: pilot-only LMMSE estimation with linear MMSE
//! detection, and the two genie-aided VB benchmarks.

use crate::constellation::Constellation;
use crate::error::{invalid, Error, Result};
use crate::linalg::solve_hpd;
use crate::model::{CovarianceSet, SystemConfig, TransmissionBlock};
use crate::vb::{hcat, VariationalState, VbOutput};
use crate::{CMatrix, Complex64};
use nalgebra::DMatrix;

/// Per-AP linear MMSE estimate of `H_l` from `R_{p,l} = H_l X_p + N`, with
/// the block-diagonal prior `diag(Σ_{1,l}, .., Σ_{K,l})`.
///
/// Solved in information form `(N0 C^{-1} + P ⊗ I_M) vec(H_l) = vec(R_{p,l} X_p^H)`
/// with `P_ij = Σ_t x*_{i,t} x_{j,t}`, which stays well posed at `N0 = 0`
/// whenever the pilots have full row rank.
pub fn lmmse_channel_estimate(
    r_pilot: &CMatrix,
    pilots: &CMatrix,
    priors: &CovarianceSet,
    noise_var: f64,
) -> Result<CMatrix> {
    let k = pilots.nrows();
    let l_count = priors.num_aps();
    let m = priors.dim();
    if r_pilot.nrows() != m * l_count || r_pilot.ncols() != pilots.ncols() || priors.num_users() != k {
        return invalid("lmmse_channel_estimate: shape mismatch");
    }
    if !(noise_var >= 0.0) {
        return invalid("noise variance must be non-negative");
    }
    let gram = pilots.conjugate() * pilots.transpose();
    let rx = r_pilot * pilots.adjoint();
    let mut h = CMatrix::zeros(m * l_count, k);
    for l in 0..l_count {
        let mut a = CMatrix::zeros(k * m, k * m);
        for i in 0..k {
            for j in 0..k {
                for d in 0..m {
                    a[(i * m + d, j * m + d)] = gram[(i, j)];
                }
            }
            if noise_var > 0.0 {
                let inv = priors.get(i, l).inverse()?;
                for r in 0..m {
                    for c in 0..m {
                        a[(i * m + r, i * m + c)] += inv[(r, c)] * noise_var;
                    }
                }
            }
        }
        let rhs = CMatrix::from_fn(k * m, 1, |idx, _| rx[(l * m + idx % m, idx / m)]);
        let sol = solve_hpd(a, &rhs).map_err(|_| {
            Error::Numeric("pilot Gram matrix is singular in the noiseless LMMSE estimate".into())
        })?;
        for i in 0..k {
            for d in 0..m {
                h[(l * m + d, i)] = sol[(i * m + d, 0)];
            }
        }
    }
    Ok(h)
}

/// Linear MMSE equalization `(Ĥ^H Ĥ + N0 I)^{-1} Ĥ^H r_t` followed by a
/// nearest-point decision per entry. Returns constellation indices,
/// column-major `K x T_d`.
pub fn lmmse_detect(h_hat: &CMatrix, r_data: &CMatrix, noise_var: f64, constellation: &Constellation) -> Result<Vec<usize>> {
    if h_hat.nrows() != r_data.nrows() {
        return invalid("lmmse_detect: shape mismatch");
    }
    let k = h_hat.ncols();
    let hh = h_hat.adjoint();
    let gram = &hh * h_hat;
    let rhs = &hh * r_data;
    let mut reg = noise_var;
    let x = loop {
        let mut g = gram.clone();
        for i in 0..k {
            g[(i, i)] += Complex64::new(reg, 0.0);
        }
        match solve_hpd(g, &rhs) {
            Ok(x) => break x,
            Err(_) => {
                // rank-deficient estimate at zero noise: smallest ridge that factors
                let scale = (0..k).map(|i| gram[(i, i)].re).sum::<f64>() / k as f64;
                reg = if reg > 0.0 { reg * 10.0 } else { 1e-12 * scale.max(1e-300) };
                if !reg.is_finite() {
                    return Err(Error::Numeric("lmmse_detect: regularized Gram is not factorable".into()));
                }
            }
        }
    };
    Ok(x.iter().map(|&z| constellation.nearest(z)).collect())
}

/// Pilot-only LMMSE channel estimation followed by linear MMSE detection.
pub fn run_lmmse_pfl(block: &TransmissionBlock, priors: &CovarianceSet, constellation: &Constellation) -> Result<(CMatrix, Vec<usize>)> {
    let h = lmmse_channel_estimate(&block.r_pilot, &block.pilots, priors, block.noise_var)?;
    let x = lmmse_detect(&h, &block.r_data, block.noise_var, constellation)?;
    Ok((h, x))
}

/// VB detection with the true channel (zero channel uncertainty): only the
/// data precisions and the symbol posteriors are iterated.
pub fn run_vb_dd_pfl(
    config: &SystemConfig,
    block: &TransmissionBlock,
    h_true: &CMatrix,
    priors: &CovarianceSet,
) -> Result<VbOutput> {
    let k = config.num_users;
    let mut st = VariationalState::new(
        config.num_aps,
        &CMatrix::zeros(k, 0),
        block.r_data.clone(),
        priors,
        &config.constellation,
        config.vb.init_symbol_var,
    )?;
    st.set_channel(h_true.clone(), DMatrix::zeros(h_true.nrows(), h_true.ncols()))?;
    let hp = config.gamma_hyper;
    for it in 1..=config.cavi_iters {
        for t in 0..st.data_len() {
            st.update_gamma_d(t, hp.a_d, hp.b_d, false);
        }
        let mut delta: f64 = 0.0;
        for t in 0..st.data_len() {
            delta = delta.max(st.update_x(t, &config.constellation));
        }
        st.set_iterations(it);
        if delta < config.vb.early_exit_tol {
            break;
        }
    }
    Ok(VbOutput { h_hat: h_true.clone(), x_hat: st.hard_decision(), state: st })
}

/// VB channel estimation that treats the whole block as pilots, using the
/// true data symbols.
pub fn run_vb_ce_pfl(config: &SystemConfig, block: &TransmissionBlock, priors: &CovarianceSet) -> Result<VbOutput> {
    let known = hcat(&block.pilots, &block.data);
    let obs = hcat(&block.r_pilot, &block.r_data);
    let mut st = VariationalState::new(config.num_aps, &known, obs, priors, &config.constellation, 0.0)?;
    let hp = config.gamma_hyper;
    for it in 1..=config.cavi_iters {
        let before = st.h_mean().clone();
        st.update_gamma_p(hp.a_p, hp.b_p, false);
        st.update_h(priors, config.vb.cross_ap_terms);
        st.set_iterations(it);
        let delta = (st.h_mean() - before).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if delta < config.vb.early_exit_tol {
            break;
        }
    }
    Ok(VbOutput { h_hat: st.h_mean().clone(), x_hat: block.data_indices.clone(), state: st })
}
