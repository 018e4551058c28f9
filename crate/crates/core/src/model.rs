//! Scenario generation: correlated Rayleigh channels, pilots, data symbols and
//! AWGN received signals for `L` access points with `M` antennas serving `K`
//! single-antenna users.
//!
//! Stacking convention: the channel `H` is `ML x K` with AP `l` occupying rows
//! `l*M .. (l+1)*M`; received blocks are `ML x T_p` and `ML x T_d`.

use crate::constellation::Constellation;
use crate::error::{invalid, Error, Result};
use crate::linalg::HermitianFactor;
use crate::quantizer::QuantizedObservation;
use crate::vb::{GammaHyper, VbOptions};
use crate::{CMatrix, Complex64};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PilotMode {
    /// i.i.d. uniform QPSK entries.
    #[default]
    Qpsk,
    /// First `K` rows of the `T_p x T_p` DFT matrix (mutually orthogonal rows).
    Dft,
}

/// Variance `N^e` of the local channel-estimation error assumed by the CPU in
/// the E-Q scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ErrorVarSchedule {
    Fixed(f64),
    SnrDependent { low_snr: f64, high_snr: f64, breakpoint_db: f64 },
}

impl Default for ErrorVarSchedule {
    fn default() -> Self {
        ErrorVarSchedule::SnrDependent { low_snr: 1e-2, high_snr: 1e-4, breakpoint_db: 10.0 }
    }
}

impl ErrorVarSchedule {
    pub fn value(&self, snr_db: f64) -> f64 {
        match *self {
            ErrorVarSchedule::Fixed(v) => v,
            ErrorVarSchedule::SnrDependent { low_snr, high_snr, breakpoint_db } => {
                if snr_db <= breakpoint_db {
                    low_snr
                } else {
                    high_snr
                }
            }
        }
    }
}

/// Every knob describing one simulated coherence block and the receivers run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_users: usize,
    pub pilot_len: usize,
    pub data_len: usize,
    /// `+inf` gives a noiseless channel.
    pub snr_db: f64,
    /// Neighbouring-antenna correlation coefficient `(re, im)`.
    pub correlation_alpha: [f64; 2],
    /// Quantizer resolution used by Q-E / E-Q methods that do not name one.
    pub quant_bits: Option<u32>,
    pub cavi_iters: usize,
    pub gamma_hyper: GammaHyper,
    pub local_ce_err_var: ErrorVarSchedule,
    pub constellation: Constellation,
    pub pilot_mode: PilotMode,
    /// Large-scale fading `beta_{i,l}` in user-major order (`K*L` entries);
    /// `None` means all ones.
    pub large_scale: Option<Vec<f64>>,
    pub master_seed: u64,
    pub vb: VbOptions,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_aps: 8,
            antennas_per_ap: 4,
            num_users: 16,
            pilot_len: 32,
            data_len: 128,
            snr_db: 10.0,
            correlation_alpha: [0.0, 0.0],
            quant_bits: Some(3),
            cavi_iters: 50,
            gamma_hyper: GammaHyper::default(),
            local_ce_err_var: ErrorVarSchedule::default(),
            constellation: Constellation::qpsk(),
            pilot_mode: PilotMode::Qpsk,
            large_scale: None,
            master_seed: 1,
            vb: VbOptions::default(),
        }
    }
}

impl SystemConfig {
    pub fn num_rx(&self) -> usize {
        self.num_aps * self.antennas_per_ap
    }

    pub fn alpha(&self) -> Complex64 {
        Complex64::new(self.correlation_alpha[0], self.correlation_alpha[1])
    }

    pub fn noise_var(&self) -> f64 {
        snr_to_noise_var(self.snr_db, self.num_users)
    }

    pub fn error_var(&self) -> f64 {
        self.local_ce_err_var.value(self.snr_db)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_aps", self.num_aps),
            ("antennas_per_ap", self.antennas_per_ap),
            ("num_users", self.num_users),
            ("pilot_len", self.pilot_len),
            ("data_len", self.data_len),
            ("cavi_iters", self.cavi_iters),
        ];
        for (name, v) in dims {
            if v == 0 {
                return invalid(format!("{name} must be at least 1"));
            }
        }
        if self.num_users > self.num_rx() {
            return invalid(format!(
                "num_users = {} exceeds the {} receive antennas",
                self.num_users,
                self.num_rx()
            ));
        }
        if self.snr_db.is_nan() {
            return invalid("snr_db is NaN");
        }
        if self.alpha().norm() >= 1.0 {
            return invalid("|correlation_alpha| must be < 1");
        }
        if let Some(b) = self.quant_bits {
            if !(1..=16).contains(&b) {
                return invalid(format!("quant_bits = {b} outside 1..=16"));
            }
        }
        self.gamma_hyper.validate()?;
        self.vb.validate()?;
        let ne_ok = |v: f64| v.is_finite() && v > 0.0;
        let ne_valid = match self.local_ce_err_var {
            ErrorVarSchedule::Fixed(v) => ne_ok(v),
            ErrorVarSchedule::SnrDependent { low_snr, high_snr, .. } => ne_ok(low_snr) && ne_ok(high_snr),
        };
        if !ne_valid {
            return invalid("local_ce_err_var must be positive and finite");
        }
        if let Some(beta) = &self.large_scale {
            if beta.len() != self.num_users * self.num_aps {
                return invalid("large_scale must have num_users * num_aps entries");
            }
            if beta.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
                return invalid("large_scale entries must be positive");
            }
        }
        if self.pilot_mode == PilotMode::Dft && self.pilot_len < self.num_users {
            return invalid("dft pilots need pilot_len >= num_users");
        }
        Ok(())
    }
}

/// Per-(user, AP) channel covariances `Σ_{i,l}`, stored user-major.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    num_users: usize,
    num_aps: usize,
    factors: Vec<HermitianFactor>,
    roots: Vec<CMatrix>,
    beta: Vec<f64>,
}

impl CovarianceSet {
    /// `Σ_{i,l} = beta_{i,l}^{-1} Σ̄`.
    pub fn from_common(sigma_bar: &CMatrix, beta: &[f64], num_users: usize, num_aps: usize) -> Result<Self> {
        if beta.len() != num_users * num_aps {
            return invalid("beta must have K*L entries");
        }
        let mut mats = Vec::with_capacity(beta.len());
        for &b in beta {
            mats.push(sigma_bar.unscale(b));
        }
        let mut set = Self::from_matrices(mats, num_users, num_aps)?;
        set.beta = beta.to_vec();
        Ok(set)
    }

    pub fn from_matrices(mats: Vec<CMatrix>, num_users: usize, num_aps: usize) -> Result<Self> {
        if mats.len() != num_users * num_aps {
            return invalid("expected K*L covariance matrices");
        }
        let mut factors = Vec::with_capacity(mats.len());
        let mut roots = Vec::with_capacity(mats.len());
        for m in mats {
            let f = HermitianFactor::new(m)?;
            roots.push(f.sqrt());
            factors.push(f);
        }
        Ok(Self { num_users, num_aps, factors, roots, beta: vec![1.0; num_users * num_aps] })
    }

    pub fn from_config(config: &SystemConfig) -> Result<Self> {
        let sigma_bar = build_exp_correlation(config.antennas_per_ap, config.alpha())?;
        let beta = config
            .large_scale
            .clone()
            .unwrap_or_else(|| vec![1.0; config.num_users * config.num_aps]);
        Self::from_common(&sigma_bar, &beta, config.num_users, config.num_aps)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn dim(&self) -> usize {
        self.factors[0].dim()
    }

    pub fn get(&self, user: usize, ap: usize) -> &HermitianFactor {
        &self.factors[user * self.num_aps + ap]
    }

    pub fn sqrt(&self, user: usize, ap: usize) -> &CMatrix {
        &self.roots[user * self.num_aps + ap]
    }

    pub fn beta(&self, user: usize, ap: usize) -> f64 {
        self.beta[user * self.num_aps + ap]
    }

    /// The covariances of one AP as a single-AP set.
    pub fn restrict_to_ap(&self, ap: usize) -> CovarianceSet {
        let pick = |i: usize| i * self.num_aps + ap;
        CovarianceSet {
            num_users: self.num_users,
            num_aps: 1,
            factors: (0..self.num_users).map(|i| self.factors[pick(i)].clone()).collect(),
            roots: (0..self.num_users).map(|i| self.roots[pick(i)].clone()).collect(),
            beta: (0..self.num_users).map(|i| self.beta[pick(i)]).collect(),
        }
    }

    /// `[Σ_{i,l}]_{mm}`.
    pub fn diag(&self, user: usize, ap: usize, m: usize) -> f64 {
        self.get(user, ap).matrix()[(m, m)].re
    }
}

/// True channel and the covariances it was drawn from.
#[derive(Debug, Clone)]
pub struct ChannelState {
    pub h: CMatrix,
}

/// One coherence block.
#[derive(Debug, Clone)]
pub struct TransmissionBlock {
    pub pilots: CMatrix,
    pub data: CMatrix,
    /// Constellation index of every data symbol (`K x T_d`, column-major).
    pub data_indices: Vec<usize>,
    pub noise_var: f64,
    pub r_pilot: CMatrix,
    pub r_data: CMatrix,
    pub quantized: Option<QuantizedObservation>,
}

/// Exponential correlation model: `[Σ]_{km} = α^{k-m}` for `k >= m`,
/// conjugate-symmetric above the diagonal.
pub fn build_exp_correlation(m: usize, alpha: Complex64) -> Result<CMatrix> {
    if m == 0 {
        return invalid("M must be at least 1");
    }
    if !(alpha.norm() < 1.0) {
        return invalid(format!("|alpha| = {} must be < 1", alpha.norm()));
    }
    let mut s = CMatrix::zeros(m, m);
    for k in 0..m {
        for j in 0..=k {
            let v = alpha.powu((k - j) as u32);
            s[(k, j)] = v;
            s[(j, k)] = v.conj();
        }
        s[(k, k)] = Complex64::new(1.0, 0.0);
    }
    Ok(s)
}

/// `N0 = K / 10^(snr_db / 10)`.
pub fn snr_to_noise_var(snr_db: f64, num_users: usize) -> f64 {
    num_users as f64 / 10f64.powf(snr_db / 10.0)
}

/// Circularly-symmetric complex normal sample with variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Draws `h_{i,l} = Σ_{i,l}^{1/2} g`, `g ~ CN(0, I_M)`, independently per (i, l).
pub fn sample_channel<R: Rng + ?Sized>(sigma: &CovarianceSet, rng: &mut R) -> ChannelState {
    let m = sigma.dim();
    let (k, l) = (sigma.num_users(), sigma.num_aps());
    let mut h = CMatrix::zeros(m * l, k);
    let mut g = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..k {
        for ap in 0..l {
            for v in g.iter_mut() {
                *v = complex_normal(rng, 1.0);
            }
            let root = sigma.sqrt(i, ap);
            for r in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..m {
                    acc += root[(r, c)] * g[c];
                }
                h[(ap * m + r, i)] = acc;
            }
        }
    }
    ChannelState { h }
}

pub fn gen_pilots<R: Rng + ?Sized>(
    num_users: usize,
    pilot_len: usize,
    mode: PilotMode,
    rng: &mut R,
) -> Result<CMatrix> {
    if num_users == 0 || pilot_len == 0 {
        return invalid("pilot dimensions must be at least 1");
    }
    match mode {
        PilotMode::Qpsk => {
            let s = FRAC_1_SQRT_2;
            Ok(CMatrix::from_fn(num_users, pilot_len, |_, _| {
                let re = if rng.random::<bool>() { s } else { -s };
                let im = if rng.random::<bool>() { s } else { -s };
                Complex64::new(re, im)
            }))
        }
        PilotMode::Dft => {
            if pilot_len < num_users {
                return invalid(format!("dft pilots need T_p = {pilot_len} >= K = {num_users}"));
            }
            let n = pilot_len as f64;
            Ok(CMatrix::from_fn(num_users, pilot_len, |k, t| {
                Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * t) as f64 / n)
            }))
        }
    }
}

/// Data symbols drawn i.i.d. from the constellation prior.
pub fn gen_data<R: Rng + ?Sized>(
    num_users: usize,
    data_len: usize,
    constellation: &Constellation,
    rng: &mut R,
) -> (CMatrix, Vec<usize>) {
    let prior = constellation.prior();
    let mut idx = Vec::with_capacity(num_users * data_len);
    for _ in 0..num_users * data_len {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = prior.len() - 1;
        for (k, p) in prior.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = k;
                break;
            }
        }
        idx.push(pick);
    }
    let pts = constellation.points();
    let x = CMatrix::from_iterator(num_users, data_len, idx.iter().map(|&k| pts[k]));
    (x, idx)
}

/// `R = H X + N` for an explicit noise matrix.
pub fn received_signal(h: &CMatrix, x: &CMatrix, noise: &CMatrix) -> Result<CMatrix> {
    if h.ncols() != x.nrows() || noise.nrows() != h.nrows() || noise.ncols() != x.ncols() {
        return invalid("shape mismatch in received_signal");
    }
    Ok(h * x + noise)
}

/// Generates `R_p` and `R_d` with i.i.d. `CN(0, N0)` noise. Noise for the
/// pilot block is drawn before the data block.
pub fn simulate_uplink<R: Rng + ?Sized>(
    config: &SystemConfig,
    channel: &ChannelState,
    pilots: &CMatrix,
    data: (CMatrix, Vec<usize>),
    rng: &mut R,
) -> Result<TransmissionBlock> {
    let (x_d, idx) = data;
    let ml = config.num_rx();
    let k = config.num_users;
    if channel.h.shape() != (ml, k)
        || pilots.shape() != (k, config.pilot_len)
        || x_d.shape() != (k, config.data_len)
        || idx.len() != k * config.data_len
    {
        return invalid("simulate_uplink: shapes do not match the configuration");
    }
    let n0 = config.noise_var();
    if !(n0 >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance {n0} is invalid")));
    }
    let mut noise = |cols: usize| CMatrix::from_fn(ml, cols, |_, _| complex_normal(rng, n0));
    let n_p = noise(config.pilot_len);
    let n_d = noise(config.data_len);
    Ok(TransmissionBlock {
        r_pilot: received_signal(&channel.h, pilots, &n_p)?,
        r_data: received_signal(&channel.h, &x_d, &n_d)?,
        pilots: pilots.clone(),
        data: x_d,
        data_indices: idx,
        noise_var: n0,
        quantized: None,
    })
}
