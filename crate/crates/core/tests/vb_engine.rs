mod common;

use cfvbjed::baselines::{lmmse_channel_estimate, run_vb_dd_pfl};
use cfvbjed::experiments::{compute_nmse_db, compute_ser, generate_trial, trial_seed};
use cfvbjed::linalg::min_eigenvalue;
use cfvbjed::model::{build_exp_correlation, gen_pilots, CovarianceSet, ErrorVarSchedule, PilotMode};
use cfvbjed::truncgauss::TruncInterval;
use cfvbjed::vb::{
    expected_residual, quantize_received, run_local_ap_ce, run_vb_eq, run_vb_pfl, run_vb_qe, VariationalState,
};
use cfvbjed::{CMatrix, Complex64, Constellation, SystemConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn small_config(snr_db: f64, seed: u64) -> SystemConfig {
    SystemConfig {
        num_aps: 2,
        antennas_per_ap: 2,
        num_users: 3,
        pilot_len: 4,
        data_len: 6,
        snr_db,
        correlation_alpha: [0.3, 0.2],
        master_seed: seed,
        ..SystemConfig::default()
    }
}

#[test]
fn scalar_channel_update() {
    let priors = CovarianceSet::from_common(&CMatrix::identity(1, 1), &[1.0], 1, 1).unwrap();
    let x = CMatrix::from_element(1, 1, c(1.0, 0.0));
    let r = CMatrix::from_element(1, 1, c(0.8, 0.0));
    let mut st = VariationalState::new(1, &x, r, &priors, &Constellation::qpsk(), 1.0).unwrap();
    assert_eq!(st.gamma_p(), 1.0);
    st.update_h(&priors, false);
    assert!((st.h_mean()[(0, 0)] - c(0.4, 0.0)).norm() < 1e-15);
    assert!((st.h_cov(0, 0, &priors)[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);
    assert!((st.h_cov_trace(0, 0) - 0.5).abs() < 1e-15);
}

#[test]
fn pilot_only_update_matches_closed_form_mmse() {
    // orthogonal pilots decouple the users, so one sweep at γ_p = 1/N0 = 1
    // must give the LMMSE estimate
    let (l, m, k, tp) = (2, 3, 2, 4);
    let sigma = build_exp_correlation(m, c(0.4, -0.3)).unwrap();
    let priors = CovarianceSet::from_common(&sigma, &vec![1.0; k * l], k, l).unwrap();
    let pilots = gen_pilots(k, tp, PilotMode::Dft, &mut common::rng(1)).unwrap();
    let r = CMatrix::from_fn(m * l, tp, |a, b| c((a as f64 * 0.7 + b as f64).sin(), (a * b) as f64 * 0.1 - 0.3));
    let mut st = VariationalState::new(l, &pilots, r.clone(), &priors, &Constellation::qpsk(), 1.0).unwrap();
    st.update_h(&priors, false);
    let oracle = lmmse_channel_estimate(&r, &pilots, &priors, 1.0).unwrap();
    assert!((st.h_mean() - &oracle).norm() < 1e-12);
    // Σ̂ = (E_p I + Σ^{-1})^{-1}
    let expect = (CMatrix::identity(m, m) * c(tp as f64, 0.0) + priors.get(0, 1).inverse().unwrap())
        .try_inverse()
        .unwrap();
    assert!((st.h_cov(0, 1, &priors) - expect).norm() < 1e-12);
}

#[test]
fn vanishing_precision_recovers_prior() {
    let cfg = small_config(5.0, 3);
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    let (_, block) = generate_trial(&cfg, &priors, 9).unwrap();
    let huge = block.r_pilot.map(|z| z * 1e12);
    let mut st = VariationalState::new(cfg.num_aps, &block.pilots, huge, &priors, &cfg.constellation, 1.0).unwrap();
    st.update_gamma_p(0.0, 0.0, false);
    assert!(st.gamma_p() < 1e-14);
    st.update_h(&priors, false);
    for i in 0..cfg.num_users {
        for l in 0..cfg.num_aps {
            let prior_tr = priors.get(i, l).trace();
            assert!((st.h_cov_trace(i, l) / prior_tr - 1.0).abs() < 1e-10);
        }
    }
    assert!(st.h_mean().iter().all(|z| z.norm() < 1e-6));
}

#[test]
fn noise_precision_from_perfect_channel() {
    // ML T_p = 1024 noise-only residuals
    let cfg = SystemConfig { num_aps: 8, antennas_per_ap: 4, num_users: 4, pilot_len: 32, snr_db: 3.0, ..SystemConfig::default() };
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    let (ch, block) = generate_trial(&cfg, &priors, 21).unwrap();
    let mut st = VariationalState::new(cfg.num_aps, &block.pilots, block.r_pilot.clone(), &priors, &cfg.constellation, 1.0).unwrap();
    st.set_channel(ch.h.clone(), DMatrix::zeros(32, 4)).unwrap();
    let g = st.update_gamma_p(0.0, 0.0, false);
    let truth = 1.0 / block.noise_var;
    assert!((g / truth - 1.0).abs() < 0.2, "γ_p = {g}, 1/N0 = {truth}");
}

#[test]
fn latent_signal_update_examples() {
    let priors = CovarianceSet::from_common(&CMatrix::identity(1, 1), &[1.0], 1, 1).unwrap();
    let x = CMatrix::from_element(1, 1, c(1.0, 0.0));
    let y = CMatrix::from_element(1, 1, c(0.3, -0.2));
    let mut st = VariationalState::new(1, &x, y, &priors, &Constellation::qpsk(), 1.0).unwrap();
    st.set_channel(CMatrix::from_element(1, 1, c(0.7, 0.1)), DMatrix::zeros(1, 1)).unwrap();
    let full = [TruncInterval::full()];
    st.update_r(0, &full, &full);
    assert!((st.r_mean()[(0, 0)] - c(0.7, 0.1)).norm() < 1e-15);
    assert!((st.r_var()[(0, 0)] - 1.0).abs() < 1e-15);
    // symmetric finite box around the prior mean
    let bre = [TruncInterval::new(0.2, 1.2).unwrap()];
    let bim = [TruncInterval::new(-0.4, 0.6).unwrap()];
    st.update_r(0, &bre, &bim);
    assert!((st.r_mean()[(0, 0)] - c(0.7, 0.1)).norm() < 1e-12);
    // one bit, prior mean 0, ⟨γ⟩ = 1: per-dimension variance 1/2
    st.set_channel(CMatrix::zeros(1, 1), DMatrix::zeros(1, 1)).unwrap();
    let pos = [TruncInterval::new(0.0, f64::INFINITY).unwrap()];
    st.update_r(0, &pos, &pos);
    assert!((st.r_mean()[(0, 0)].re - 0.5642).abs() < 1e-4);
    assert!((st.r_mean()[(0, 0)].im - 0.5642).abs() < 1e-4);
}

#[test]
fn fine_quantization_makes_latent_signal_the_observation() {
    let cfg = small_config(10.0, 5);
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    let (_, block) = generate_trial(&cfg, &priors, 77).unwrap();
    let q = quantize_received(&block, &priors, 16).unwrap();
    let mut st = VariationalState::new(cfg.num_aps, &block.pilots, q.y_pilot.values.clone(), &priors, &cfg.constellation, 1.0).unwrap();
    for t in 0..cfg.pilot_len {
        st.update_r(t, &q.y_pilot.bins_re, &q.y_pilot.bins_im);
    }
    assert!((st.r_mean() - &block.r_pilot).camax() < 1e-3);
    assert!(st.r_var().max() < 1e-6);
}

/// Block-diagonal covariance of the stacked `h_i`.
fn stacked_cov(st: &VariationalState, i: usize, priors: &CovarianceSet) -> CMatrix {
    let (l, m) = (priors.num_aps(), priors.dim());
    let mut out = CMatrix::zeros(l * m, l * m);
    for a in 0..l {
        out.view_mut((a * m, a * m), (m, m)).copy_from(&st.h_cov(i, a, priors));
    }
    out
}

fn check_invariants(st: &VariationalState, priors: &CovarianceSet, tau_r: bool) -> Result<(), TestCaseError> {
    let k = st.num_users();
    let tp = st.pilot_len();
    for t in 0..st.data_len() {
        for i in 0..k {
            let pmf = st.x_pmf(i, t);
            prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(st.x_var()[(i, tp + t)] >= 0.0);
        }
        prop_assert!(st.gamma_d()[t] > 0.0);
    }
    prop_assert!(st.gamma_p() > 0.0);
    prop_assert!(st.r_var().iter().all(|&v| v >= 0.0));
    for i in 0..k {
        for l in 0..priors.num_aps() {
            let cov = st.h_cov(i, l, priors);
            prop_assert!(min_eigenvalue(&cov) >= -1e-10);
            prop_assert!((cov.clone() - cov.adjoint()).norm() < 1e-12);
            prop_assert!(st.h_cov_trace(i, l) <= priors.get(i, l).trace() * (1.0 + 1e-12));
        }
    }
    // cached residuals agree with the closed-form expectation
    let covs: Vec<CMatrix> = (0..k).map(|i| stacked_cov(st, i, priors)).collect();
    for t in 0..st.data_len() {
        let col = tp + t;
        let y: Vec<Complex64> = st.r_mean().column(col).iter().copied().collect();
        let xm: Vec<Complex64> = st.x_mean().column(col).iter().copied().collect();
        let xv: Vec<f64> = st.x_var().column(col).iter().copied().collect();
        let yv = if tau_r { st.r_var().column(col).sum() } else { 0.0 };
        let exact = expected_residual(&y, yv, st.h_mean(), &covs, &xm, &xv).unwrap();
        let cached = st.data_residual(t, tau_r);
        prop_assert!((exact - cached).abs() <= 1e-9 * exact.max(1.0), "{} vs {}", exact, cached);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cavi_sweeps_preserve_invariants(seed in 0u64..1_000_000, snr in -5.0f64..25.0, bits in 1u32..5, quantized in any::<bool>()) {
        let cfg = small_config(snr, seed);
        let priors = CovarianceSet::from_config(&cfg).unwrap();
        let (_, block) = generate_trial(&cfg, &priors, seed).unwrap();
        let q = quantize_received(&block, &priors, bits).unwrap();
        let (obs, bins_re, bins_im) = if quantized {
            let mut obs = CMatrix::zeros(block.r_pilot.nrows(), cfg.pilot_len + cfg.data_len);
            obs.columns_mut(0, cfg.pilot_len).copy_from(&q.y_pilot.values);
            obs.columns_mut(cfg.pilot_len, cfg.data_len).copy_from(&q.y_data.values);
            let re: Vec<TruncInterval> = q.y_pilot.bins_re.iter().chain(&q.y_data.bins_re).copied().collect();
            let im: Vec<TruncInterval> = q.y_pilot.bins_im.iter().chain(&q.y_data.bins_im).copied().collect();
            (obs, Some(re), Some(im))
        } else {
            let mut obs = CMatrix::zeros(block.r_pilot.nrows(), cfg.pilot_len + cfg.data_len);
            obs.columns_mut(0, cfg.pilot_len).copy_from(&block.r_pilot);
            obs.columns_mut(cfg.pilot_len, cfg.data_len).copy_from(&block.r_data);
            (obs, None, None)
        };
        let mut st = VariationalState::new(cfg.num_aps, &block.pilots, obs, &priors, &cfg.constellation, 1.0).unwrap();
        for _ in 0..6 {
            let gp = st.update_gamma_p(0.0, 0.0, quantized);
            // EM special case: precision is the count over the residual
            prop_assert_eq!(gp, (cfg.num_rx() * cfg.pilot_len) as f64 / st.pilot_residual(quantized).max(1e-12));
            if let (Some(re), Some(im)) = (&bins_re, &bins_im) {
                for t in 0..cfg.pilot_len {
                    st.update_r(t, re, im);
                }
            }
            for t in 0..cfg.data_len {
                let g = st.update_gamma_d(t, 0.0, 0.0, quantized);
                prop_assert_eq!(g, cfg.num_rx() as f64 / st.data_residual(t, quantized).max(1e-12));
                if let (Some(re), Some(im)) = (&bins_re, &bins_im) {
                    st.update_r(cfg.pilot_len + t, re, im);
                }
            }
            st.update_h(&priors, false);
            for t in 0..cfg.data_len {
                st.update_x(t, &cfg.constellation);
            }
            check_invariants(&st, &priors, quantized)?;
        }
        prop_assert!(st.residual_drift() < 1e-9);
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = small_config(8.0, 4);
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    let (_, block) = generate_trial(&cfg, &priors, trial_seed(4, 0)).unwrap();
    let q = quantize_received(&block, &priors, 2).unwrap();
    let a = run_vb_qe(&cfg, &block, &q, &priors).unwrap();
    let b = run_vb_qe(&cfg, &block, &q, &priors).unwrap();
    assert_eq!(a.h_hat, b.h_hat);
    assert_eq!(a.x_hat, b.x_hat);
    let a = run_vb_eq(&cfg, &block, &priors, 2).unwrap();
    let b = run_vb_eq(&cfg, &block, &priors, 2).unwrap();
    assert_eq!(a.h_hat, b.h_hat);
    assert_eq!(a.x_hat, b.x_hat);
}

#[test]
fn high_resolution_qe_follows_pfl() {
    let cfg = SystemConfig::default();
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    for n in 0..3 {
        let (_, block) = generate_trial(&cfg, &priors, trial_seed(cfg.master_seed, n)).unwrap();
        let q = quantize_received(&block, &priors, 12).unwrap();
        let qe = run_vb_qe(&cfg, &block, &q, &priors).unwrap();
        let pfl = run_vb_pfl(&cfg, &block, &priors).unwrap();
        let rel = (&qe.h_hat - &pfl.h_hat).norm() / pfl.h_hat.norm();
        assert!(rel < 1e-3, "trial {n}: relative channel difference {rel:e}");
    }
}

#[test]
fn noiseless_orthogonal_pfl_is_exact() {
    let cfg = SystemConfig {
        num_users: 4,
        snr_db: f64::INFINITY,
        pilot_mode: PilotMode::Dft,
        ..SystemConfig::default()
    };
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    for n in 0..10 {
        let (ch, block) = generate_trial(&cfg, &priors, trial_seed(2, n)).unwrap();
        let out = run_vb_pfl(&cfg, &block, &priors).unwrap();
        assert_eq!(compute_ser(&out.x_hat, &block.data_indices).unwrap(), 0.0);
        let nmse = compute_nmse_db(&out.h_hat, &ch.h).unwrap();
        assert!(nmse < -40.0, "trial {n}: {nmse} dB");
    }
}

#[test]
fn single_user_array_gain() {
    let cfg = SystemConfig { num_users: 1, snr_db: 0.0, ..SystemConfig::default() };
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    let (mut errors, mut total) = (0, 0);
    for n in 0..20 {
        let (_, block) = generate_trial(&cfg, &priors, trial_seed(3, n)).unwrap();
        let out = run_vb_pfl(&cfg, &block, &priors).unwrap();
        errors += out.x_hat.iter().zip(&block.data_indices).filter(|(a, b)| a != b).count();
        total += block.data_indices.len();
    }
    assert!((errors as f64 / total as f64) < 1e-3);
}

#[test]
fn local_estimation_examples() {
    // noiseless, orthogonal pilots
    let cfg = SystemConfig { num_users: 8, snr_db: f64::INFINITY, pilot_mode: PilotMode::Dft, ..SystemConfig::default() };
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    let (ch, block) = generate_trial(&cfg, &priors, 5).unwrap();
    let m = cfg.antennas_per_ap;
    for l in 0..cfg.num_aps {
        let r = block.r_pilot.rows(l * m, m).into_owned();
        let est = run_local_ap_ce(&r, &block.pilots, &priors.restrict_to_ap(l), &cfg).unwrap();
        let truth = ch.h.rows(l * m, m).into_owned();
        assert!(compute_nmse_db(&est.h, &truth).unwrap() < -40.0);
    }
    // fewer pilots than users
    let cfg = SystemConfig { pilot_len: 10, ..SystemConfig::default() };
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    let (ch, block) = generate_trial(&cfg, &priors, 6).unwrap();
    let r = block.r_pilot.rows(0, m).into_owned();
    let est = run_local_ap_ce(&r, &block.pilots, &priors.restrict_to_ap(0), &cfg).unwrap();
    assert!(compute_nmse_db(&est.h, &ch.h.rows(0, m).into_owned()).unwrap().is_finite());
    assert!(est.cov.iter().all(|s| min_eigenvalue(s) >= -1e-10));
    let out = run_vb_eq(&cfg, &block, &priors, 3).unwrap();
    assert!(compute_nmse_db(&out.h_hat, &ch.h).unwrap().is_finite());
}

#[test]
fn local_estimate_with_known_precision_is_mmse() {
    // one AP, orthogonal pilots, identity prior, N0 = 1: a single update at
    // the initial precision 1 equals the scalar MMSE estimate
    let (m, k, tp) = (4, 3, 8);
    let priors = CovarianceSet::from_common(&CMatrix::identity(m, m), &vec![1.0; k], k, 1).unwrap();
    let pilots = gen_pilots(k, tp, PilotMode::Dft, &mut common::rng(2)).unwrap();
    let r = CMatrix::from_fn(m, tp, |a, b| c(((a + 1) * (b + 2)) as f64 * 0.13, (a as f64 - b as f64) * 0.21));
    let mut st = VariationalState::new(1, &pilots, r.clone(), &priors, &Constellation::qpsk(), 0.0).unwrap();
    st.update_h(&priors, false);
    let mmse = (&r * pilots.adjoint()) * c(1.0 / (tp as f64 + 1.0), 0.0);
    assert!((st.h_mean() - mmse).norm() < 1e-12);
}

#[test]
fn eq_with_clean_local_estimates_tracks_genie() {
    let mut cfg = SystemConfig { local_ce_err_var: ErrorVarSchedule::Fixed(1e-8), ..SystemConfig::default() };
    cfg.snr_db = 6.0;
    let priors = CovarianceSet::from_config(&cfg).unwrap();
    let (mut eq_err, mut dd_err) = (0usize, 0usize);
    for n in 0..10 {
        let (ch, mut block) = generate_trial(&cfg, &priors, trial_seed(8, n)).unwrap();
        block.r_pilot = &ch.h * &block.pilots;
        let eq = run_vb_eq(&cfg, &block, &priors, 12).unwrap();
        let dd = run_vb_dd_pfl(&cfg, &block, &ch.h, &priors).unwrap();
        assert!(compute_nmse_db(&eq.h_hat, &ch.h).unwrap() < -30.0);
        eq_err += eq.x_hat.iter().zip(&block.data_indices).filter(|(a, b)| a != b).count();
        dd_err += dd.x_hat.iter().zip(&block.data_indices).filter(|(a, b)| a != b).count();
    }
    assert!(dd_err > 0, "operating point too easy to compare");
    assert!(eq_err <= 2 * dd_err, "E-Q {eq_err} vs genie {dd_err} errors");
}
