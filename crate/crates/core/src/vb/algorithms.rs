use super::state::VariationalState;
use crate::constellation::Constellation;
use crate::error::{invalid, Result};
use crate::model::{CovarianceSet, SystemConfig, TransmissionBlock};
use crate::quantizer::{quantize_matrix, QuantizedMatrix, QuantizedObservation, QuantizerSpec};
use crate::truncgauss::{quantized_channel_posterior, TruncInterval};
use crate::{CMatrix, Complex64};
use nalgebra::DMatrix;

/// Channel estimate, hard symbol decisions (indices into the constellation,
/// column-major `K x T_d`) and the final variational state.
#[derive(Debug, Clone)]
pub struct VbOutput {
    pub h_hat: CMatrix,
    pub x_hat: Vec<usize>,
    pub state: VariationalState,
}

pub(crate) fn hcat(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Per-row quantizer scale `sqrt(E|r|² / 2)` with `E|r|² = Σ_i [Σ_{i,l}]_mm + N0`
/// (unit-energy symbols).
pub fn received_scales(priors: &CovarianceSet, noise_var: f64) -> Vec<f64> {
    let m = priors.dim();
    let mut out = Vec::with_capacity(m * priors.num_aps());
    for l in 0..priors.num_aps() {
        for k in 0..m {
            let p: f64 = (0..priors.num_users()).map(|i| priors.diag(i, l, k)).sum();
            out.push(((p + noise_var) / 2.0).sqrt());
        }
    }
    out
}

/// Quantizes the pilot and data blocks with `bits`-bit uniform quantizers,
/// one per receive antenna.
pub fn quantize_received(block: &TransmissionBlock, priors: &CovarianceSet, bits: u32) -> Result<QuantizedObservation> {
    let specs = row_quantizers(priors, block.noise_var, bits)?;
    Ok(QuantizedObservation {
        bits,
        y_pilot: quantize_matrix(&specs, &block.r_pilot)?,
        y_data: quantize_matrix(&specs, &block.r_data)?,
    })
}

fn row_quantizers(priors: &CovarianceSet, noise_var: f64, bits: u32) -> Result<Vec<QuantizerSpec>> {
    received_scales(priors, noise_var)
        .into_iter()
        .map(|s| QuantizerSpec::for_gaussian(bits, s))
        .collect()
}

/// Quantizers for the entries of the stacked `ML x K` channel estimate,
/// column-major, each scaled to the prior standard deviation per real
/// dimension `sqrt([Σ_{i,l}]_mm / 2)`.
pub fn eq_channel_quantizers(priors: &CovarianceSet, bits: u32) -> Result<Vec<QuantizerSpec>> {
    let m = priors.dim();
    let mut out = Vec::with_capacity(m * priors.num_aps() * priors.num_users());
    for i in 0..priors.num_users() {
        for l in 0..priors.num_aps() {
            for k in 0..m {
                out.push(QuantizerSpec::for_gaussian(bits, (priors.diag(i, l, k) / 2.0).sqrt())?);
            }
        }
    }
    Ok(out)
}

fn quantize_entries(specs: &[QuantizerSpec], h: &CMatrix) -> QuantizedMatrix {
    let mut values = CMatrix::zeros(h.nrows(), h.ncols());
    let mut bins_re = Vec::with_capacity(h.len());
    let mut bins_im = Vec::with_capacity(h.len());
    for (idx, (z, spec)) in h.iter().zip(specs).enumerate() {
        let (qr, br) = spec.quantize_with_bin(z.re);
        let (qi, bi) = spec.quantize_with_bin(z.im);
        values[idx] = Complex64::new(qr, qi);
        bins_re.push(br);
        bins_im.push(bi);
    }
    QuantizedMatrix { values, bins_re, bins_im }
}

fn joint_loop(
    config: &SystemConfig,
    st: &mut VariationalState,
    priors: &CovarianceSet,
    bins: Option<(&[TruncInterval], &[TruncInterval])>,
) {
    let hp = config.gamma_hyper;
    let opts = config.vb;
    let tau_r = opts.include_tau_r && bins.is_some();
    let tp = st.pilot_len();
    let td = st.data_len();
    for it in 1..=config.cavi_iters {
        st.update_gamma_p(hp.a_p, hp.b_p, tau_r);
        if let Some((re, im)) = bins {
            for t in 0..tp {
                st.update_r(t, re, im);
            }
        }
        for t in 0..td {
            st.update_gamma_d(t, hp.a_d, hp.b_d, tau_r);
            if let Some((re, im)) = bins {
                st.update_r(tp + t, re, im);
            }
        }
        st.update_h(priors, opts.cross_ap_terms);
        let mut delta: f64 = 0.0;
        for t in 0..td {
            delta = delta.max(st.update_x(t, &config.constellation));
        }
        st.set_iterations(it);
        if delta < opts.early_exit_tol {
            break;
        }
    }
}

fn finish(st: VariationalState) -> VbOutput {
    VbOutput { h_hat: st.h_mean().clone(), x_hat: st.hard_decision(), state: st }
}

/// JED on unquantized signals.
pub fn run_vb_pfl(config: &SystemConfig, block: &TransmissionBlock, priors: &CovarianceSet) -> Result<VbOutput> {
    let obs = hcat(&block.r_pilot, &block.r_data);
    let mut st = VariationalState::new(
        config.num_aps,
        &block.pilots,
        obs,
        priors,
        &config.constellation,
        config.vb.init_symbol_var,
    )?;
    joint_loop(config, &mut st, priors, None);
    Ok(finish(st))
}

/// JED on quantized pilot and data signals: the unquantized received signals
/// become latent variables with truncated-Gaussian posteriors.
pub fn run_vb_qe(
    config: &SystemConfig,
    block: &TransmissionBlock,
    quantized: &QuantizedObservation,
    priors: &CovarianceSet,
) -> Result<VbOutput> {
    let (yp, yd) = (&quantized.y_pilot, &quantized.y_data);
    if yp.values.shape() != block.r_pilot.shape() || yd.values.shape() != block.r_data.shape() {
        return invalid("quantized observation does not match the block");
    }
    let obs = hcat(&yp.values, &yd.values);
    let bins_re: Vec<TruncInterval> = yp.bins_re.iter().chain(&yd.bins_re).copied().collect();
    let bins_im: Vec<TruncInterval> = yp.bins_im.iter().chain(&yd.bins_im).copied().collect();
    let mut st = VariationalState::new(
        config.num_aps,
        &block.pilots,
        obs,
        priors,
        &config.constellation,
        config.vb.init_symbol_var,
    )?;
    joint_loop(config, &mut st, priors, Some((&bins_re, &bins_im)));
    Ok(finish(st))
}

/// Result of the pilot-only channel estimation at one AP.
#[derive(Debug, Clone)]
pub struct LocalEstimate {
    /// `M x K` posterior means.
    pub h: CMatrix,
    /// `Σ̂^loc_{i,l}` per user.
    pub cov: Vec<CMatrix>,
    pub gamma_p: f64,
    pub iterations: usize,
}

/// CAVI channel estimation at one AP from its own `M x T_p` pilot
/// observation, alternating the local precision and the per-user channel
/// posteriors. `priors` must describe that AP only (one AP, `K` users).
pub fn run_local_ap_ce(
    r_pilot: &CMatrix,
    pilots: &CMatrix,
    priors: &CovarianceSet,
    config: &SystemConfig,
) -> Result<LocalEstimate> {
    if priors.num_aps() != 1 {
        return invalid("local estimation expects the covariances of a single AP");
    }
    let hp = config.gamma_hyper;
    let mut st = VariationalState::new(1, pilots, r_pilot.clone(), priors, &Constellation::qpsk(), 0.0)?;
    for it in 1..=config.cavi_iters {
        let before = st.h_mean().clone();
        st.update_gamma_p(hp.a_p, hp.b_p, false);
        st.update_h(priors, false);
        st.set_iterations(it);
        let delta = (st.h_mean() - before).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if delta < config.vb.early_exit_tol {
            break;
        }
    }
    let cov = (0..priors.num_users()).map(|i| st.h_cov(i, 0, priors)).collect();
    Ok(LocalEstimate { h: st.h_mean().clone(), cov, gamma_p: st.gamma_p(), iterations: st.iterations() })
}

/// Estimate-then-quantize: local channel estimation at every AP, `bits`-bit
/// quantization of the estimates and of the data signals, then JED at the
/// CPU over the data block.
pub fn run_vb_eq(
    config: &SystemConfig,
    block: &TransmissionBlock,
    priors: &CovarianceSet,
    bits: u32,
) -> Result<VbOutput> {
    let m = config.antennas_per_ap;
    let mut h_loc = CMatrix::zeros(config.num_rx(), config.num_users);
    for l in 0..config.num_aps {
        let r_ap = block.r_pilot.rows(l * m, m).into_owned();
        let local = run_local_ap_ce(&r_ap, &block.pilots, &priors.restrict_to_ap(l), config)?;
        h_loc.rows_mut(l * m, m).copy_from(&local.h);
    }
    let hq = quantize_entries(&eq_channel_quantizers(priors, bits)?, &h_loc);
    let specs = row_quantizers(priors, block.noise_var, bits)?;
    let yd = quantize_matrix(&specs, &block.r_data)?;
    run_vb_eq_cpu(config, &hq, &yd, priors, config.error_var())
}

/// CPU part of estimate-then-quantize given the quantized channel estimates
/// `hq` (`ML x K`) and quantized data `y_data` (`ML x T_d`).
pub fn run_vb_eq_cpu(
    config: &SystemConfig,
    hq: &QuantizedMatrix,
    y_data: &QuantizedMatrix,
    priors: &CovarianceSet,
    err_var: f64,
) -> Result<VbOutput> {
    if !(err_var > 0.0) {
        return invalid("local estimation error variance must be positive");
    }
    let k = config.num_users;
    let ml = config.num_rx();
    if hq.values.shape() != (ml, k) || y_data.nrows() != ml {
        return invalid("E-Q inputs do not match the configuration");
    }
    let hp = config.gamma_hyper;
    let opts = config.vb;
    let mut st = VariationalState::new(
        config.num_aps,
        &CMatrix::zeros(k, 0),
        y_data.values.clone(),
        priors,
        &config.constellation,
        opts.init_symbol_var,
    )?;
    // channel posterior given the quantized estimate alone, centred on h^q
    let m = priors.dim();
    let var = DMatrix::from_fn(ml, k, |row, i| {
        let idx = i * ml + row;
        let prior = priors.diag(i, row / m, row % m);
        quantized_channel_posterior(Complex64::new(0.0, 0.0), prior, hq.bins_re[idx], hq.bins_im[idx], err_var).1
    });
    st.set_channel(hq.values.clone(), var)?;
    let td = st.data_len();
    for it in 1..=config.cavi_iters {
        for t in 0..td {
            st.update_gamma_d(t, hp.a_d, hp.b_d, opts.include_tau_r);
            st.update_r(t, &y_data.bins_re, &y_data.bins_im);
        }
        st.update_h_quantized(priors, hq, err_var, opts.cross_ap_terms);
        let mut delta: f64 = 0.0;
        for t in 0..td {
            delta = delta.max(st.update_x(t, &config.constellation));
        }
        st.set_iterations(it);
        if delta < opts.early_exit_tol {
            break;
        }
    }
    Ok(finish(st))
}
