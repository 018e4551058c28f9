//! Moments of Gaussians truncated to an interval, and the posterior of a
//! Gaussian variable observed through additive Gaussian error followed by a
//! quantizer.
//!
//! All ratios `φ/Φ` are evaluated through the scaled complementary error
//! function `erfcx(x) = exp(x²) erfc(x)`, reflecting intervals into the upper
//! tail first, so the moments stay finite for truncation points many standard
//! deviations from the mean.

use crate::Complex64;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Interval `(low, up]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncInterval {
    low: f64,
    up: f64,
}

impl TruncInterval {
    pub fn new(low: f64, up: f64) -> crate::Result<Self> {
        if low.is_nan() || up.is_nan() || !(low < up) {
            return Err(crate::Error::InvalidParameter(format!("invalid interval ({low}, {up}]")));
        }
        Ok(Self { low, up })
    }

    pub(crate) fn new_unchecked(low: f64, up: f64) -> Self {
        debug_assert!(low < up);
        Self { low, up }
    }

    pub const fn full() -> Self {
        Self { low: f64::NEG_INFINITY, up: f64::INFINITY }
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn up(&self) -> f64 {
        self.up
    }

    pub fn is_full(&self) -> bool {
        self.low == f64::NEG_INFINITY && self.up == f64::INFINITY
    }

    pub fn width(&self) -> f64 {
        self.up - self.low
    }

    pub fn contains(&self, x: f64) -> bool {
        self.low < x && x <= self.up
    }

    /// Multiplies both bounds by a positive factor.
    pub fn scaled(&self, s: f64) -> Self {
        Self { low: self.low * s, up: self.up * s }
    }

    fn clamp(&self, x: f64) -> f64 {
        x.max(self.low).min(self.up)
    }
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        INV_SQRT_2PI * (-0.5 * x * x).exp()
    }
}

#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Scaled complementary error function `exp(x²) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        2.0 * (x * x).exp() - erfcx(-x)
    } else if x < 25.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        // asymptotic series; the next term is below 1e-13 relative at x = 25
        let x2 = x * x;
        let inv = 1.0 / (2.0 * x2);
        let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv.powi(3) + 105.0 * inv.powi(4);
        series / (x * PI.sqrt())
    }
}

/// Mean and variance of a truncated distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

/// `N(0, 1)` truncated to `(a, b]` with `0 <= a < b <= inf`.
fn upper_tail_moments(a: f64, b: f64) -> Moments {
    if a > 1e3 {
        // Mills-ratio asymptotics, exact to O(a^-4)
        let mean = a + 1.0 / a;
        let mut var = 1.0 / (a * a);
        if b.is_finite() {
            var = var.min((b - a) * (b - a) / 12.0);
            return Moments { mean: mean.min(0.5 * (a + b)), var };
        }
        return Moments { mean, var };
    }
    let (d, one_minus_d, b_d) = if b.is_finite() {
        let e = -0.5 * (b - a) * (b + a);
        let d = e.exp();
        (d, -e.exp_m1(), b * d)
    } else {
        (0.0, 1.0, 0.0)
    };
    let tail_b = if b.is_finite() { d * erfcx(b * FRAC_1_SQRT_2) } else { 0.0 };
    // mass scaled by exp(a²/2)
    let z = 0.5 * (erfcx(a * FRAC_1_SQRT_2) - tail_b);
    let r1 = INV_SQRT_2PI * one_minus_d / z;
    let r2 = INV_SQRT_2PI * (a - b_d) / z;
    finish(a, b, r1, r2)
}

fn finish(a: f64, b: f64, r1: f64, r2: f64) -> Moments {
    let mut mean = r1;
    let mut var = 1.0 + r2 - r1 * r1;
    let width = b - a;
    if !mean.is_finite() || !(mean >= a && mean <= b) {
        mean = if width.is_finite() {
            0.5 * (a + b)
        } else if a.is_finite() {
            a.max(mean.min(f64::MAX))
        } else {
            b
        };
        mean = mean.max(a).min(b);
    }
    if !var.is_finite() || var <= 0.0 {
        var = if width.is_finite() { (width * width / 12.0).min(1.0) } else { 1e-6 };
    }
    Moments { mean, var: var.min(1.0) }
}

/// `N(0, 1)` truncated to `(a, b]`.
pub fn std_trunc_moments(a: f64, b: f64) -> Moments {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return Moments { mean: 0.0, var: 1.0 };
    }
    if b <= 0.0 {
        let m = upper_tail_moments(-b, -a);
        return Moments { mean: -m.mean, var: m.var };
    }
    if a >= 0.0 {
        return upper_tail_moments(a, b);
    }
    // a < 0 < b: the mass is at least min(Φ(b) - 1/2, 1/2 - Φ(a)) and erf has
    // no cancellation across zero
    let z = 0.5 * (libm::erf(b * FRAC_1_SQRT_2) - libm::erf(a * FRAC_1_SQRT_2));
    let (pa, apa) = if a.is_finite() { (std_normal_pdf(a), a * std_normal_pdf(a)) } else { (0.0, 0.0) };
    let (pb, bpb) = if b.is_finite() { (std_normal_pdf(b), b * std_normal_pdf(b)) } else { (0.0, 0.0) };
    finish(a, b, (pa - pb) / z, (apa - bpb) / z)
}

/// Mean and variance of `N(mu, var)` restricted to `interval`.
///
/// The returned mean always lies in the closure of the interval and the
/// variance in `(0, var]`; when the interval carries no representable mass
/// the degenerate limit (nearest bound or bin midpoint) is returned.
pub fn trunc_norm_moments(mu: f64, var: f64, interval: TruncInterval) -> Moments {
    if interval.is_full() {
        return Moments { mean: mu, var };
    }
    if !(var > 0.0) {
        return Moments { mean: interval.clamp(mu), var: 0.0 };
    }
    let sd = var.sqrt();
    let a = (interval.low - mu) / sd;
    let b = (interval.up - mu) / sd;
    let m = std_trunc_moments(a, b);
    Moments { mean: interval.clamp(mu + sd * m.mean), var: var * m.var }
}

/// Complex Gaussian `CN(mu, nu)` truncated to a box: real and imaginary
/// parts are independent `N(·, nu/2)` truncated per dimension. Returns the
/// complex mean and the total variance.
pub fn trunc_cgauss_moments(mu: Complex64, nu: f64, re: TruncInterval, im: TruncInterval) -> (Complex64, f64) {
    let half = 0.5 * nu;
    let mr = trunc_norm_moments(mu.re, half, re);
    let mi = trunc_norm_moments(mu.im, half, im);
    (Complex64::new(mr.mean, mi.mean), mr.var + mi.var)
}

/// Posterior of one real channel coordinate `h ~ N(prior_mean, prior_var)`
/// given that `h + e`, `e ~ N(0, err_var)`, fell into `bin`.
///
/// Marginally `z = h + e ~ N(prior_mean, prior_var + err_var)`; conditioning
/// on `z ∈ bin` and regressing `h` on `z` gives
/// `E[h] = prior_mean + k (E[z | bin] - prior_mean)` and
/// `Var[h] = prior_var (1 - k) + k² Var[z | bin]` with
/// `k = prior_var / (prior_var + err_var)`.
pub fn quantized_real_posterior(prior_mean: f64, prior_var: f64, bin: TruncInterval, err_var: f64) -> Moments {
    let total = prior_var + err_var;
    let z = trunc_norm_moments(prior_mean, total, bin);
    let k = prior_var / total;
    Moments {
        mean: prior_mean + k * (z.mean - prior_mean),
        var: prior_var * (1.0 - k) + k * k * z.var,
    }
}

/// Element-wise posterior of a complex channel entry with pseudo-prior
/// `CN(h_tilde, sigma_tilde)` whose noisy local estimate (error variance
/// `err_var`, circular) was quantized into the box `re_bin x im_bin`.
///
/// Returns the posterior mean and the total variance (real + imaginary).
pub fn quantized_channel_posterior(
    h_tilde: Complex64,
    sigma_tilde: f64,
    re_bin: TruncInterval,
    im_bin: TruncInterval,
    err_var: f64,
) -> (Complex64, f64) {
    let re = quantized_real_posterior(h_tilde.re, 0.5 * sigma_tilde, re_bin, 0.5 * err_var);
    let im = quantized_real_posterior(h_tilde.im, 0.5 * sigma_tilde, im_bin, 0.5 * err_var);
    (Complex64::new(re.mean, im.mean), re.var + im.var)
}
