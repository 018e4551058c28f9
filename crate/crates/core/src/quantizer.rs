//! Uniform mid-rise scalar quantizer applied per real dimension.
//!
//! With `b` bits and step `Δ` the thresholds are `d_i = (-2^{b-1} + i) Δ`,
//! `i = 1 .. 2^b - 1`, bins are half-open `(d_{i-1}, d_i]` with `d_0 = -inf`,
//! `d_{2^b} = +inf`, and the reconstruction level of bin `i` is `d_i - Δ/2`.
//! Inputs are divided by a scale `s` before quantization and levels are
//! multiplied back, so outputs and bin bounds live in signal units.

use crate::error::{invalid, Result};
use crate::truncgauss::TruncInterval;
use crate::{CMatrix, Complex64};

/// MSE-optimal uniform steps for a unit-variance Gaussian input, `b = 1..=4`.
const STEP_TABLE: [f64; 4] = [1.596, 0.996, 0.586, 0.335];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    bits: u32,
    step: f64,
    scale: f64,
}

impl QuantizerSpec {
    pub fn new(bits: u32, step: f64, scale: f64) -> Result<Self> {
        if !(1..=24).contains(&bits) {
            return invalid(format!("bits = {bits} outside 1..=24"));
        }
        if !(step > 0.0 && step.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
            return invalid("quantizer step and scale must be positive and finite");
        }
        Ok(Self { bits, step, scale })
    }

    /// Quantizer for inputs whose per-real-dimension standard deviation is
    /// `scale`, using [`default_step`] for `b <= 4` and [`optimal_step`]
    /// beyond the table.
    pub fn for_gaussian(bits: u32, scale: f64) -> Result<Self> {
        let step = if bits <= 4 { default_step(bits)? } else { optimal_step(bits)? };
        Self::new(bits, step, scale)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn num_levels(&self) -> u64 {
        1u64 << self.bits
    }

    /// `d_i` in normalized units, `i = 0 ..= 2^b` (infinite at both ends).
    pub fn threshold(&self, i: u64) -> f64 {
        let n = self.num_levels();
        if i == 0 {
            f64::NEG_INFINITY
        } else if i >= n {
            f64::INFINITY
        } else {
            (i as f64 - (n / 2) as f64) * self.step
        }
    }

    /// Bin index `i in 1 ..= 2^b` containing the normalized value `r`.
    pub fn bin_index(&self, r: f64) -> u64 {
        let n = self.num_levels();
        let half = (n / 2) as f64;
        let x = (r / self.step + half).ceil();
        if x.is_nan() || x <= 1.0 {
            1
        } else if x >= n as f64 {
            n
        } else {
            let mut i = x as u64;
            // guard the ceil against rounding in r / step
            if r > self.threshold(i) {
                i += 1;
            } else if i > 1 && r <= self.threshold(i - 1) {
                i -= 1;
            }
            i
        }
    }

    /// Reconstruction level of bin `i`, normalized units.
    pub fn level(&self, i: u64) -> f64 {
        (i as f64 - (self.num_levels() / 2) as f64 - 0.5) * self.step
    }

    /// Quantizes a value already divided by the scale.
    pub fn quantize_normalized(&self, r: f64) -> f64 {
        self.level(self.bin_index(r))
    }

    /// Quantizes a value in signal units; the result is in signal units.
    pub fn quantize(&self, r: f64) -> f64 {
        self.scale * self.quantize_normalized(r / self.scale)
    }

    pub fn quantize_complex(&self, r: Complex64) -> Complex64 {
        Complex64::new(self.quantize(r.re), self.quantize(r.im))
    }

    /// Bin `(low, up]` of a normalized reconstruction level.
    pub fn bin_bounds_normalized(&self, q: f64) -> Result<(f64, f64)> {
        let n = self.num_levels();
        let pos = q / self.step + (n / 2) as f64 + 0.5;
        let i = pos.round();
        if !(1.0..=n as f64).contains(&i) || (pos - i).abs() > 1e-6 {
            return invalid(format!("{q} is not a reconstruction level of this quantizer"));
        }
        let i = i as u64;
        Ok((self.threshold(i - 1), self.threshold(i)))
    }

    /// Bin of a reconstruction level given in signal units, in signal units.
    pub fn bin_bounds(&self, q: f64) -> Result<TruncInterval> {
        let (lo, up) = self.bin_bounds_normalized(q / self.scale)?;
        Ok(TruncInterval::new_unchecked(lo * self.scale, up * self.scale))
    }

    /// Quantized value and bin, both in signal units, in one pass.
    pub fn quantize_with_bin(&self, r: f64) -> (f64, TruncInterval) {
        let i = self.bin_index(r / self.scale);
        let s = self.scale;
        (
            s * self.level(i),
            TruncInterval::new_unchecked(s * self.threshold(i - 1), s * self.threshold(i)),
        )
    }
}

/// MSE-optimal uniform step for `N(0, 1)` input, tabulated for `b = 1..=4`.
pub fn default_step(bits: u32) -> Result<f64> {
    match bits {
        1..=4 => Ok(STEP_TABLE[bits as usize - 1]),
        _ => invalid(format!("no tabulated step for b = {bits} (table covers 1..=4)")),
    }
}

/// Mean-squared error of the uniform quantizer on `N(0, 1)` input, from the
/// closed-form per-bin Gaussian integrals.
pub fn gaussian_distortion(bits: u32, step: f64) -> f64 {
    use crate::truncgauss::{std_normal_cdf, std_normal_pdf};
    let n = 1u64 << bits;
    let half = n / 2;
    // symmetric: sum the upper half and double
    let mut total = 0.0;
    for i in (half + 1)..=n {
        let a = (i as f64 - 1.0 - half as f64) * step;
        let b = if i == n { f64::INFINITY } else { (i - half) as f64 * step };
        let c = (i as f64 - half as f64 - 0.5) * step;
        let mass = std_normal_cdf(b) - std_normal_cdf(a);
        let pa = std_normal_pdf(a);
        let (pb, bpb) = if b.is_finite() { (std_normal_pdf(b), b * std_normal_pdf(b)) } else { (0.0, 0.0) };
        total += (1.0 + c * c) * mass + a * pa - bpb - 2.0 * c * (pa - pb);
    }
    2.0 * total
}

/// Step minimizing [`gaussian_distortion`], by golden-section search.
pub fn optimal_step(bits: u32) -> Result<f64> {
    if !(1..=24).contains(&bits) {
        return invalid(format!("bits = {bits} outside 1..=24"));
    }
    // the optimal loading factor step * 2^(b-1) stays within (0.5, 8) sigma
    let scale = (1u64 << (bits - 1)) as f64;
    let (mut lo, mut hi) = (0.5 / scale, 8.0 / scale);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (gaussian_distortion(bits, x1), gaussian_distortion(bits, x2));
    for _ in 0..200 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = gaussian_distortion(bits, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = gaussian_distortion(bits, x2);
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Quantized complex matrix with the per-entry bins of both real dimensions.
#[derive(Debug, Clone)]
pub struct QuantizedMatrix {
    pub values: CMatrix,
    /// Column-major, aligned with `values`.
    pub bins_re: Vec<TruncInterval>,
    pub bins_im: Vec<TruncInterval>,
}

impl QuantizedMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Quantizes every entry with a per-row quantizer (rows share statistics
/// across time, e.g. one receive antenna).
pub fn quantize_matrix(specs: &[QuantizerSpec], r: &CMatrix) -> Result<QuantizedMatrix> {
    if specs.len() != r.nrows() {
        return invalid("one quantizer per row expected");
    }
    let n = r.len();
    let mut values = CMatrix::zeros(r.nrows(), r.ncols());
    let mut bins_re = Vec::with_capacity(n);
    let mut bins_im = Vec::with_capacity(n);
    for c in 0..r.ncols() {
        for (row, spec) in specs.iter().enumerate() {
            let z = r[(row, c)];
            let (qre, bre) = spec.quantize_with_bin(z.re);
            let (qim, bim) = spec.quantize_with_bin(z.im);
            values[(row, c)] = Complex64::new(qre, qim);
            bins_re.push(bre);
            bins_im.push(bim);
        }
    }
    Ok(QuantizedMatrix { values, bins_re, bins_im })
}

/// Quantized pilot and data blocks forwarded by the APs.
#[derive(Debug, Clone)]
pub struct QuantizedObservation {
    pub bits: u32,
    pub y_pilot: QuantizedMatrix,
    pub y_data: QuantizedMatrix,
}
