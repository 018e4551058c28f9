use crate::constellation::Constellation;
use crate::error::{invalid, Result};
use crate::model::CovarianceSet;
use crate::quantizer::QuantizedMatrix;
use crate::truncgauss::{quantized_channel_posterior, trunc_cgauss_moments, TruncInterval};
use crate::{CMatrix, Complex64};
use nalgebra::DMatrix;

/// Lower clamp on Gamma-posterior rate denominators.
pub const GAMMA_DENOM_FLOOR: f64 = 1e-12;

/// Mean of the Gamma posterior `(a + count) / (b + residual)`.
pub fn gamma_mean(a: f64, b: f64, count: f64, residual: f64) -> f64 {
    (a + count) / (b + residual).max(GAMMA_DENOM_FLOOR)
}

/// `q(a) ∝ p_a exp(-precision |a - z|²)`, normalized in log space. Writes the
/// pmf into `pmf` and returns its mean and variance.
pub fn symbol_posterior(constellation: &Constellation, z: Complex64, precision: f64, pmf: &mut [f64]) -> (Complex64, f64) {
    let pts = constellation.points();
    let prior = constellation.prior();
    let mut max = f64::NEG_INFINITY;
    for (k, (a, p)) in pts.iter().zip(prior).enumerate() {
        let e = p.ln() - precision * (a - z).norm_sqr();
        pmf[k] = e;
        max = max.max(e);
    }
    let mut sum = 0.0;
    for v in pmf.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let mut mean = Complex64::new(0.0, 0.0);
    let mut second = 0.0;
    for (v, a) in pmf.iter_mut().zip(pts) {
        *v /= sum;
        mean += a * *v;
        second += a.norm_sqr() * *v;
    }
    (mean, (second - mean.norm_sqr()).max(0.0))
}

/// Arg-max of each pmf (rows of `num_symbols` entries); ties go to the lowest index.
pub fn hard_decision(pmf: &[f64], num_symbols: usize) -> Vec<usize> {
    pmf.chunks_exact(num_symbols)
        .map(|row| {
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone)]
enum PosteriorCov {
    /// `Σ̂_{i,l} = [c_i I + Σ_{i,l}^{-1}]^{-1}`; one gain per user.
    Gain(Vec<f64>),
    /// Element-wise variances, `ML x K`.
    Diagonal(DMatrix<f64>),
}

/// Mean-field posterior over channels, symbols, precisions and (in the
/// quantized scenarios) the unquantized received signals.
///
/// Columns are ordered pilots first: the first `pilot_len` columns of the
/// symbol matrix are known and weighted by `⟨γ_p⟩`, the remaining
/// `data_len` are unknown and weighted by their own `⟨γ_{d,t}⟩`.
#[derive(Debug, Clone)]
pub struct VariationalState {
    num_aps: usize,
    antennas: usize,
    num_users: usize,
    pilot_len: usize,
    data_len: usize,
    num_symbols: usize,
    h: CMatrix,
    cov: PosteriorCov,
    /// `Tr Σ̂_{i,l}`, user-major.
    trace: Vec<f64>,
    trace_user: Vec<f64>,
    hnorm: Vec<f64>,
    x: CMatrix,
    x_var: DMatrix<f64>,
    x_pmf: Vec<f64>,
    gamma_p: f64,
    gamma_d: Vec<f64>,
    r: CMatrix,
    r_var: DMatrix<f64>,
    tau_r_col: Vec<f64>,
    /// `⟨R⟩ - ⟨H⟩⟨X⟩`, kept in sync by every update.
    resid: CMatrix,
    iterations: usize,
}

impl VariationalState {
    /// Starts from `⟨H⟩ = 0` with the prior as channel posterior, data symbols
    /// at the prior pmf with mean zero and variance `init_symbol_var`.
    ///
    /// `known` holds the pilot symbols (`K x T_p`, possibly zero columns);
    /// `observations` is `ML x (T_p + T_d)` with the pilot columns first.
    pub fn new(
        num_aps: usize,
        known: &CMatrix,
        observations: CMatrix,
        priors: &CovarianceSet,
        constellation: &Constellation,
        init_symbol_var: f64,
    ) -> Result<Self> {
        let num_users = known.nrows();
        let ml = observations.nrows();
        let total = observations.ncols();
        if num_aps == 0 || ml % num_aps != 0 || total < known.ncols() {
            return invalid("observation shape does not match the AP layout");
        }
        if priors.num_users() != num_users || priors.num_aps() != num_aps || priors.dim() * num_aps != ml {
            return invalid("covariance set does not match the observation shape");
        }
        let pilot_len = known.ncols();
        let data_len = total - pilot_len;
        let num_symbols = constellation.len();
        let mut x = CMatrix::zeros(num_users, total);
        x.columns_mut(0, pilot_len).copy_from(known);
        let mut x_var = DMatrix::zeros(num_users, total);
        x_var.columns_mut(pilot_len, data_len).fill(init_symbol_var);
        let mut x_pmf = Vec::with_capacity(num_users * data_len * num_symbols);
        for _ in 0..num_users * data_len {
            x_pmf.extend_from_slice(constellation.prior());
        }
        let mut trace = Vec::with_capacity(num_users * num_aps);
        for i in 0..num_users {
            for l in 0..num_aps {
                trace.push(priors.get(i, l).trace());
            }
        }
        let mut st = Self {
            num_aps,
            antennas: ml / num_aps,
            num_users,
            pilot_len,
            data_len,
            num_symbols,
            h: CMatrix::zeros(ml, num_users),
            cov: PosteriorCov::Gain(vec![0.0; num_users]),
            trace,
            trace_user: vec![0.0; num_users],
            hnorm: vec![0.0; num_users],
            x,
            x_var,
            x_pmf,
            gamma_p: 1.0,
            gamma_d: vec![1.0; data_len],
            resid: observations.clone(),
            r: observations,
            r_var: DMatrix::zeros(ml, total),
            tau_r_col: vec![0.0; total],
            iterations: 0,
        };
        st.refresh_channel_stats();
        Ok(st)
    }

    /// Replaces the channel posterior by `N(h, diag(var))` element-wise.
    pub fn set_channel(&mut self, h: CMatrix, var: DMatrix<f64>) -> Result<()> {
        if h.shape() != self.h.shape() || var.shape() != self.h.shape() {
            return invalid("channel shape mismatch");
        }
        self.h = h;
        self.cov = PosteriorCov::Diagonal(var);
        self.refresh_channel_stats();
        self.recompute_residual();
        Ok(())
    }

    fn refresh_channel_stats(&mut self) {
        let m = self.antennas;
        if let PosteriorCov::Diagonal(v) = &self.cov {
            for i in 0..self.num_users {
                for l in 0..self.num_aps {
                    self.trace[i * self.num_aps + l] = (0..m).map(|k| v[(l * m + k, i)]).sum();
                }
            }
        }
        for i in 0..self.num_users {
            self.trace_user[i] = self.trace[i * self.num_aps..(i + 1) * self.num_aps].iter().sum();
            self.hnorm[i] = self.h.column(i).norm_squared();
        }
    }

    fn recompute_residual(&mut self) {
        self.resid = &self.r - &self.h * &self.x;
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn pilot_len(&self) -> usize {
        self.pilot_len
    }

    pub fn data_len(&self) -> usize {
        self.data_len
    }

    pub fn h_mean(&self) -> &CMatrix {
        &self.h
    }

    /// `Σ̂_{i,l}` as a dense matrix.
    pub fn h_cov(&self, user: usize, ap: usize, priors: &CovarianceSet) -> CMatrix {
        match &self.cov {
            PosteriorCov::Gain(g) => priors.get(user, ap).posterior_covariance(g[user]),
            PosteriorCov::Diagonal(v) => {
                let m = self.antennas;
                CMatrix::from_fn(m, m, |r, c| {
                    if r == c {
                        Complex64::new(v[(ap * m + r, user)], 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
            }
        }
    }

    pub fn h_cov_trace(&self, user: usize, ap: usize) -> f64 {
        self.trace[user * self.num_aps + ap]
    }

    /// `⟨‖h_i‖²⟩ = ‖⟨h_i⟩‖² + Σ_l Tr Σ̂_{i,l}`.
    pub fn expected_channel_energy(&self, user: usize) -> f64 {
        self.hnorm[user] + self.trace_user[user]
    }

    /// All symbol means, pilots included (`K x T`).
    pub fn x_mean(&self) -> &CMatrix {
        &self.x
    }

    /// All symbol variances, zero on pilot columns.
    pub fn x_var(&self) -> &DMatrix<f64> {
        &self.x_var
    }

    /// Pmf of symbol `(user, t)` with `t` indexing data columns.
    pub fn x_pmf(&self, user: usize, t: usize) -> &[f64] {
        let o = (t * self.num_users + user) * self.num_symbols;
        &self.x_pmf[o..o + self.num_symbols]
    }

    pub fn gamma_p(&self) -> f64 {
        self.gamma_p
    }

    pub fn gamma_d(&self) -> &[f64] {
        &self.gamma_d
    }

    pub fn r_mean(&self) -> &CMatrix {
        &self.r
    }

    pub fn r_var(&self) -> &DMatrix<f64> {
        &self.r_var
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub(crate) fn set_iterations(&mut self, n: usize) {
        self.iterations = n;
    }

    /// Arg-max decisions for the data symbols, column-major `K x T_d`.
    pub fn hard_decision(&self) -> Vec<usize> {
        hard_decision(&self.x_pmf, self.num_symbols)
    }

    fn weight(&self, col: usize) -> f64 {
        if col < self.pilot_len {
            self.gamma_p
        } else {
            self.gamma_d[col - self.pilot_len]
        }
    }

    fn col_sq(&self, col: usize) -> f64 {
        let ml = self.r.nrows();
        self.resid.as_slice()[col * ml..(col + 1) * ml].iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Σ_{t ≤ T_p} ⟨‖r_t - H x_t‖²⟩` (plus `Σ τ^r` if requested).
    pub fn pilot_residual(&self, include_tau_r: bool) -> f64 {
        let mut res = 0.0;
        for t in 0..self.pilot_len {
            res += self.col_sq(t);
            for i in 0..self.num_users {
                res += self.x[(i, t)].norm_sqr() * self.trace_user[i];
            }
            if include_tau_r {
                res += self.tau_r_col[t];
            }
        }
        res
    }

    /// `⟨‖r_t - H x_t‖²⟩` for data column `t`.
    pub fn data_residual(&self, t: usize, include_tau_r: bool) -> f64 {
        let col = self.pilot_len + t;
        let mut res = self.col_sq(col);
        for i in 0..self.num_users {
            let xv = self.x_var[(i, col)];
            res += xv * self.hnorm[i] + (self.x[(i, col)].norm_sqr() + xv) * self.trace_user[i];
        }
        if include_tau_r {
            res += self.tau_r_col[col];
        }
        res
    }

    pub fn update_gamma_p(&mut self, a_p: f64, b_p: f64, include_tau_r: bool) -> f64 {
        if self.pilot_len > 0 {
            let count = (self.r.nrows() * self.pilot_len) as f64;
            self.gamma_p = gamma_mean(a_p, b_p, count, self.pilot_residual(include_tau_r));
        }
        self.gamma_p
    }

    pub fn update_gamma_d(&mut self, t: usize, a_d: f64, b_d: f64, include_tau_r: bool) -> f64 {
        let count = self.r.nrows() as f64;
        let g = gamma_mean(a_d, b_d, count, self.data_residual(t, include_tau_r));
        self.gamma_d[t] = g;
        g
    }

    /// Truncated-Gaussian update of column `col` (pilot columns first) of the
    /// latent received signal; `bins` holds the per-entry boxes of the whole
    /// `ML x T` observation in column-major order.
    pub fn update_r(&mut self, col: usize, bins_re: &[TruncInterval], bins_im: &[TruncInterval]) {
        let ml = self.r.nrows();
        let nu = 1.0 / self.weight(col).max(GAMMA_DENOM_FLOOR);
        let off = col * ml;
        let r = &mut self.r.as_mut_slice()[off..off + ml];
        let e = &mut self.resid.as_mut_slice()[off..off + ml];
        let rv = &mut self.r_var.as_mut_slice()[off..off + ml];
        let mut sum = 0.0;
        for k in 0..ml {
            let mu = r[k] - e[k];
            let (mean, var) = trunc_cgauss_moments(mu, nu, bins_re[off + k], bins_im[off + k]);
            e[k] = mean - mu;
            r[k] = mean;
            rv[k] = var;
            sum += var;
        }
        self.tau_r_col[col] = sum;
    }

    /// Per-user data-term precision gain `c_i` and `Σ_t w_t |⟨x⟩|²`, plus the
    /// conjugate weighted symbols.
    fn user_weights(&self, i: usize, wconj: &mut [Complex64]) -> (f64, f64) {
        let mut c = 0.0;
        let mut wx2 = 0.0;
        for (t, wc) in wconj.iter_mut().enumerate() {
            let w = self.weight(t);
            let x = self.x[(i, t)];
            let x2 = x.norm_sqr();
            c += w * (x2 + self.x_var[(i, t)]);
            wx2 += w * x2;
            *wc = x.conj() * w;
        }
        (c, wx2)
    }

    /// Numerator `Σ_t w_t (r_{l,t} - Σ_{j≠i} h_{j,l} x_{j,t}) x*_{i,t}` for
    /// `(i, l)`, optionally with the other APs' residual sums `ap_sum`.
    fn numerator(&self, i: usize, l: usize, wconj: &[Complex64], wx2: f64, ap_sum: Option<&CMatrix>, out: &mut [Complex64]) {
        let ml = self.r.nrows();
        let m = self.antennas;
        let base = l * m;
        let e = self.resid.as_slice();
        for k in 0..m {
            out[k] = self.h[(base + k, i)] * wx2;
        }
        for (t, &wc) in wconj.iter().enumerate() {
            let col = &e[t * ml + base..t * ml + base + m];
            match ap_sum {
                None => {
                    for k in 0..m {
                        out[k] += col[k] * wc;
                    }
                }
                Some(s) => {
                    for k in 0..m {
                        out[k] += s[(k, t)] * wc;
                    }
                }
            }
        }
    }

    fn ap_sum(&self) -> CMatrix {
        let m = self.antennas;
        let mut s = CMatrix::zeros(m, self.r.ncols());
        for t in 0..self.r.ncols() {
            for l in 0..self.num_aps {
                for k in 0..m {
                    s[(k, t)] += self.resid[(l * m + k, t)];
                }
            }
        }
        s
    }

    /// Moves `h_{i,l}` to `new`, keeping the residual (and AP sum) in sync.
    fn apply_channel_delta(&mut self, i: usize, l: usize, new: &[Complex64], ap_sum: Option<&mut CMatrix>) {
        let ml = self.r.nrows();
        let m = self.antennas;
        let base = l * m;
        let mut delta = vec![Complex64::new(0.0, 0.0); m];
        let mut any = false;
        for k in 0..m {
            delta[k] = new[k] - self.h[(base + k, i)];
            any |= delta[k] != Complex64::new(0.0, 0.0);
            self.h[(base + k, i)] = new[k];
        }
        if !any {
            return;
        }
        let cols = self.r.ncols();
        let e = self.resid.as_mut_slice();
        match ap_sum {
            None => {
                for t in 0..cols {
                    let x = self.x[(i, t)];
                    let col = &mut e[t * ml + base..t * ml + base + m];
                    for k in 0..m {
                        col[k] -= delta[k] * x;
                    }
                }
            }
            Some(s) => {
                for t in 0..cols {
                    let x = self.x[(i, t)];
                    let col = &mut e[t * ml + base..t * ml + base + m];
                    for k in 0..m {
                        let d = delta[k] * x;
                        col[k] -= d;
                        s[(k, t)] -= d;
                    }
                }
            }
        }
    }

    /// Gaussian channel update for every `(i, l)`, swept user by user and AP
    /// by AP so that each update sees the freshest means.
    pub fn update_h(&mut self, priors: &CovarianceSet, cross_ap_terms: bool) {
        let m = self.antennas;
        let mut wconj = vec![Complex64::new(0.0, 0.0); self.r.ncols()];
        let mut b = vec![Complex64::new(0.0, 0.0); m];
        let mut v = vec![Complex64::new(0.0, 0.0); m];
        let mut new = vec![Complex64::new(0.0, 0.0); m];
        let mut gains = vec![0.0; self.num_users];
        let mut ap_sum = cross_ap_terms.then(|| self.ap_sum());
        for i in 0..self.num_users {
            let (c, wx2) = self.user_weights(i, &mut wconj);
            gains[i] = c;
            for l in 0..self.num_aps {
                let f = priors.get(i, l);
                self.numerator(i, l, &wconj, wx2, ap_sum.as_ref(), &mut b);
                // Σ̂ b = U diag(λ / (1 + c λ)) U^H b
                let u = f.eigenvectors();
                let lam = f.eigenvalues();
                for k in 0..m {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for r in 0..m {
                        acc += u[(r, k)].conj() * b[r];
                    }
                    v[k] = acc * (lam[k] / (1.0 + c * lam[k]));
                }
                for r in 0..m {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..m {
                        acc += u[(r, k)] * v[k];
                    }
                    new[r] = acc;
                }
                self.apply_channel_delta(i, l, &new, ap_sum.as_mut());
                self.trace[i * self.num_aps + l] = f.posterior_trace(c);
            }
        }
        self.cov = PosteriorCov::Gain(gains);
        self.refresh_channel_stats();
    }

    /// Channel update of the E-Q CPU: the data-driven Gaussian pseudo-prior
    /// `CN(h̃, Σ̃)` is fused element-wise with the quantized local estimate
    /// `h^q` (bins of an `ML x K` matrix) observed through error variance
    /// `err_var`. The resulting covariance is diagonal.
    pub fn update_h_quantized(
        &mut self,
        priors: &CovarianceSet,
        hq: &QuantizedMatrix,
        err_var: f64,
        cross_ap_terms: bool,
    ) {
        let m = self.antennas;
        let ml = self.r.nrows();
        let mut wconj = vec![Complex64::new(0.0, 0.0); self.r.ncols()];
        let mut b = vec![Complex64::new(0.0, 0.0); m];
        let mut v = vec![Complex64::new(0.0, 0.0); m];
        let mut new = vec![Complex64::new(0.0, 0.0); m];
        let mut var = match &self.cov {
            PosteriorCov::Diagonal(d) => d.clone(),
            PosteriorCov::Gain(_) => DMatrix::zeros(ml, self.num_users),
        };
        let mut ap_sum = cross_ap_terms.then(|| self.ap_sum());
        for i in 0..self.num_users {
            let (c, wx2) = self.user_weights(i, &mut wconj);
            for l in 0..self.num_aps {
                let f = priors.get(i, l);
                self.numerator(i, l, &wconj, wx2, ap_sum.as_ref(), &mut b);
                let u = f.eigenvectors();
                let lam = f.eigenvalues();
                let d: Vec<f64> = lam.iter().map(|&x| x / (1.0 + c * x)).collect();
                for k in 0..m {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for r in 0..m {
                        acc += u[(r, k)].conj() * b[r];
                    }
                    v[k] = acc * d[k];
                }
                let mut tr = 0.0;
                for r in 0..m {
                    let mut acc = Complex64::new(0.0, 0.0);
                    let mut diag = 0.0;
                    for k in 0..m {
                        acc += u[(r, k)] * v[k];
                        diag += u[(r, k)].norm_sqr() * d[k];
                    }
                    let row = l * m + r;
                    let idx = i * ml + row;
                    let (mean, pv) =
                        quantized_channel_posterior(acc, diag, hq.bins_re[idx], hq.bins_im[idx], err_var);
                    new[r] = mean;
                    var[(row, i)] = pv;
                    tr += pv;
                }
                self.apply_channel_delta(i, l, &new, ap_sum.as_mut());
                self.trace[i * self.num_aps + l] = tr;
            }
        }
        self.cov = PosteriorCov::Diagonal(var);
        self.refresh_channel_stats();
    }

    /// Symbol updates for data column `t` (users in order); returns the
    /// largest change of a symbol mean.
    pub fn update_x(&mut self, t: usize, constellation: &Constellation) -> f64 {
        let col = self.pilot_len + t;
        let ml = self.r.nrows();
        let g = self.gamma_d[t];
        let mut max_delta: f64 = 0.0;
        for i in 0..self.num_users {
            let energy = self.expected_channel_energy(i);
            let old = self.x[(i, col)];
            let hcol = &self.h.as_slice()[i * ml..(i + 1) * ml];
            let (z, prec) = if energy > 0.0 && g > 0.0 {
                let e = &self.resid.as_slice()[col * ml..(col + 1) * ml];
                let mut acc = old * self.hnorm[i];
                for (h, r) in hcol.iter().zip(e) {
                    acc += h.conj() * r;
                }
                (acc / energy, g * energy)
            } else {
                (Complex64::new(0.0, 0.0), 0.0)
            };
            let o = (t * self.num_users + i) * self.num_symbols;
            let (mean, var) = symbol_posterior(constellation, z, prec, &mut self.x_pmf[o..o + self.num_symbols]);
            let delta = mean - old;
            max_delta = max_delta.max(delta.norm());
            self.x[(i, col)] = mean;
            self.x_var[(i, col)] = var;
            if delta != Complex64::new(0.0, 0.0) {
                let hcol = &self.h.as_slice()[i * ml..(i + 1) * ml];
                let e = &mut self.resid.as_mut_slice()[col * ml..(col + 1) * ml];
                for (r, h) in e.iter_mut().zip(hcol) {
                    *r -= h * delta;
                }
            }
        }
        max_delta
    }

    /// Largest absolute entry of `R - H X - resid`; zero up to rounding when
    /// the cached residual is consistent.
    pub fn residual_drift(&self) -> f64 {
        let fresh = &self.r - &self.h * &self.x;
        (fresh - &self.resid).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}
