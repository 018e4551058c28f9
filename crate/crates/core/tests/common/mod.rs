#![allow(dead_code)]

use cfvbjed::truncgauss::{quantized_channel_posterior, trunc_norm_moments, TruncInterval};
use cfvbjed::vb::expected_residual;
use cfvbjed::{CMatrix, Complex64};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Exp1, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn std_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Exact draw from N(0,1) restricted to (a, b) with 0 <= a < b (upper tail):
/// exponential proposal for wide intervals, uniform proposal for narrow ones.
fn tail_draw(r: &mut ChaCha8Rng, a: f64, b: f64) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let use_exp = b - a > 1.0 / lambda.max(1e-3) || b.is_infinite();
    loop {
        if use_exp {
            let e: f64 = Exp1.sample(r);
            let z = a + e / lambda;
            if z >= b {
                continue;
            }
            if r.random::<f64>() <= (-(z - lambda).powi(2) / 2.0).exp() {
                return z;
            }
        } else {
            let z = a + (b - a) * r.random::<f64>();
            if r.random::<f64>() <= ((a * a - z * z) / 2.0).exp() {
                return z;
            }
        }
    }
}

/// Rejection sampler for N(0,1) restricted to (a, b), independent of the
/// library's closed forms.
pub fn trunc_std_draw(r: &mut ChaCha8Rng, a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        return tail_draw(r, a, b);
    }
    if b <= 0.0 {
        return -tail_draw(r, -b, -a);
    }
    // interval straddles zero: plain rejection accepts at least ~15% when it
    // covers [-0.2, 0.2] or more, otherwise the uniform proposal does
    if b - a < 1.0 {
        loop {
            let z = a + (b - a) * r.random::<f64>();
            if r.random::<f64>() <= (-z * z / 2.0).exp() {
                return z;
            }
        }
    }
    loop {
        let z: f64 = StandardNormal.sample(r);
        if z > a && z < b {
            return z;
        }
    }
}

/// Random `(mu, var, interval)` with probability mass at least `1e-6`.
pub fn random_trunc_case(r: &mut ChaCha8Rng) -> (f64, f64, TruncInterval) {
    loop {
        let mu = r.random_range(-3.0..3.0);
        let var: f64 = 10f64.powf(r.random_range(-2.0..1.0));
        let sd = var.sqrt();
        let kind = r.random_range(0..4);
        let p1 = mu + sd * r.random_range(-5.0..5.0);
        let p2 = p1 + sd * 10f64.powf(r.random_range(-2.0..1.0));
        let (lo, up) = match kind {
            0 => (p1, f64::INFINITY),
            1 => (f64::NEG_INFINITY, p1),
            _ => (p1, p2),
        };
        let mass = std_cdf((up - mu) / sd) - std_cdf((lo - mu) / sd);
        if mass >= 1e-6 {
            return (mu, var, TruncInterval::new(lo, up).unwrap());
        }
    }
}

/// Largest |analytic - MC| / SE over `cases` random truncated normals, for
/// the mean and the variance.
pub fn trunc_moments_max_z(cases: usize, samples: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let (mut zmax_mean, mut zmax_var) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let (mu, var, iv) = random_trunc_case(&mut r);
        let sd = var.sqrt();
        let (a, b) = ((iv.low() - mu) / sd, (iv.up() - mu) / sd);
        let xs: Vec<f64> = (0..samples).map(|_| mu + sd * trunc_std_draw(&mut r, a, b)).collect();
        let n = samples as f64;
        let m = xs.iter().sum::<f64>() / n;
        let c2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let c4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        let se_mean = (c2 / n).sqrt();
        let se_var = ((c4 - c2 * c2).max(0.0) / n).sqrt();
        let got = trunc_norm_moments(mu, var, iv);
        zmax_mean = zmax_mean.max((got.mean - m).abs() / se_mean);
        zmax_var = zmax_var.max((got.var - c2).abs() / se_var);
    }
    (zmax_mean, zmax_var)
}

/// Mean and variance of one real coordinate with prior `N(m, s2)` given that
/// `h + e`, `e ~ N(0, e2)`, fell into `bin`, by composite Simpson quadrature.
pub fn posterior_by_quadrature(m: f64, s2: f64, bin: TruncInterval, e2: f64) -> (f64, f64) {
    let (s, e) = (s2.sqrt(), e2.sqrt());
    let mut lo = m - 40.0 * s;
    let mut hi = m + 40.0 * s;
    if bin.low().is_finite() {
        lo = lo.max(bin.low() - 40.0 * e);
    }
    if bin.up().is_finite() {
        hi = hi.min(bin.up() + 40.0 * e);
    }
    assert!(lo < hi, "quadrature range is empty");
    let log_w = |h: f64| {
        let like = std_cdf((bin.up() - h) / e) - std_cdf((bin.low() - h) / e);
        -(h - m).powi(2) / (2.0 * s2) + like.max(1e-300).ln()
    };
    let n = 200_000usize;
    let step = (hi - lo) / n as f64;
    let peak = (0..=n).map(|k| log_w(lo + k as f64 * step)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut z1, mut z2) = (0.0, 0.0, 0.0);
    for k in 0..=n {
        let h = lo + k as f64 * step;
        let c = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let w = c * (log_w(h) - peak).exp();
        z += w;
        z1 += w * h;
        z2 += w * h * h;
    }
    let mean = z1 / z;
    (mean, z2 / z - mean * mean)
}

/// Largest absolute deviation between `quantized_channel_posterior` and the
/// quadrature oracle (mean parts and total variance) over random draws.
pub fn channel_posterior_max_err(cases: usize, seed: u64) -> f64 {
    use cfvbjed::quantizer::QuantizerSpec;
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < cases {
        let bits = r.random_range(1..=4u32);
        let spec = QuantizerSpec::for_gaussian(bits, std::f64::consts::FRAC_1_SQRT_2).unwrap();
        let h_t = Complex64::new(r.random_range(-1.5..1.5), r.random_range(-1.5..1.5));
        let sig: f64 = 10f64.powf(r.random_range(-2.0..0.5));
        let ne: f64 = 10f64.powf(r.random_range(-4.0..0.0));
        let truth = Complex64::new(r.random_range(-1.5..1.5), r.random_range(-1.5..1.5));
        let (_, bre) = spec.quantize_with_bin(truth.re);
        let (_, bim) = spec.quantize_with_bin(truth.im);
        let mass = |m: f64, bin: TruncInterval| {
            let t = (0.5 * (sig + ne)).sqrt();
            std_cdf((bin.up() - m) / t) - std_cdf((bin.low() - m) / t)
        };
        if mass(h_t.re, bre) < 1e-8 || mass(h_t.im, bim) < 1e-8 {
            continue;
        }
        let (mean, var) = quantized_channel_posterior(h_t, sig, bre, bim, ne);
        let (mr, vr) = posterior_by_quadrature(h_t.re, 0.5 * sig, bre, 0.5 * ne);
        let (mi, vi) = posterior_by_quadrature(h_t.im, 0.5 * sig, bim, 0.5 * ne);
        worst = worst.max((mean.re - mr).abs()).max((mean.im - mi).abs()).max((var - vr - vi).abs());
        done += 1;
    }
    worst
}

fn cn(r: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let a: f64 = StandardNormal.sample(r);
    let b: f64 = StandardNormal.sample(r);
    Complex64::new(s * a, s * b)
}

/// Largest |closed form - MC| / SE of `⟨‖y - A x‖²⟩` over random instances.
pub fn residual_max_z(instances: usize, samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut zmax = 0.0f64;
    for _ in 0..instances {
        let n = r.random_range(1..=5usize);
        let k = r.random_range(1..=4usize);
        let y_mean: Vec<Complex64> = (0..n).map(|_| cn(&mut r, 1.0)).collect();
        let y_var: Vec<f64> = (0..n).map(|_| r.random_range(0.0..0.5)).collect();
        let a_mean = CMatrix::from_fn(n, k, |_, _| cn(&mut r, 1.0));
        // column covariances L L^H
        let roots: Vec<CMatrix> = (0..k).map(|_| CMatrix::from_fn(n, n, |_, _| cn(&mut r, 0.2))).collect();
        let a_covs: Vec<CMatrix> = roots.iter().map(|l| l * l.adjoint()).collect();
        let x_mean: Vec<Complex64> = (0..k).map(|_| cn(&mut r, 1.0)).collect();
        let x_var: Vec<f64> = (0..k).map(|_| r.random_range(0.0..0.5)).collect();
        let exact = expected_residual(&y_mean, y_var.iter().sum(), &a_mean, &a_covs, &x_mean, &x_var).unwrap();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..samples {
            let mut resid: Vec<Complex64> = (0..n).map(|d| y_mean[d] + cn(&mut r, y_var[d])).collect();
            for j in 0..k {
                let g: Vec<Complex64> = (0..n).map(|_| cn(&mut r, 1.0)).collect();
                let x = x_mean[j] + cn(&mut r, x_var[j]);
                for d in 0..n {
                    let mut a = a_mean[(d, j)];
                    for c in 0..n {
                        a += roots[j][(d, c)] * g[c];
                    }
                    resid[d] -= a * x;
                }
            }
            let v: f64 = resid.iter().map(|z| z.norm_sqr()).sum();
            sum += v;
            sum2 += v * v;
        }
        let m = sum / samples as f64;
        let var = (sum2 / samples as f64 - m * m).max(0.0);
        let se = (var / samples as f64).sqrt();
        zmax = zmax.max((exact - m).abs() / se);
    }
    zmax
}
