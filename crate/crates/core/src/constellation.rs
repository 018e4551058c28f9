//! Finite symbol alphabets with a prior.

use crate::error::{invalid, Result};
use crate::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstellation", into = "RawConstellation")]
pub struct Constellation {
    points: Vec<Complex64>,
    prior: Vec<f64>,
}

impl Constellation {
    pub fn new(points: Vec<Complex64>, prior: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != prior.len() {
            return invalid("constellation points and prior must be non-empty and equally long");
        }
        if prior.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return invalid("constellation prior entries must be positive");
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("constellation prior sums to {total}, expected 1"));
        }
        Ok(Self { points, prior })
    }

    pub fn uniform(points: Vec<Complex64>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    /// Gray-ordered unit-energy QPSK: index `2*b0 + b1` maps to
    /// `((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`.
    pub fn qpsk() -> Self {
        let s = FRAC_1_SQRT_2;
        let points = vec![
            Complex64::new(s, s),
            Complex64::new(s, -s),
            Complex64::new(-s, s),
            Complex64::new(-s, -s),
        ];
        Self { points, prior: vec![0.25; 4] }
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Prior mean energy `sum_a p_a |a|^2`.
    pub fn mean_energy(&self) -> f64 {
        self.points.iter().zip(&self.prior).map(|(a, p)| p * a.norm_sqr()).sum()
    }

    /// Index of the point closest to `z`; ties resolve to the lowest index.
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, a) in self.points.iter().enumerate() {
            let d = (a - z).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

#[derive(Serialize, Deserialize)]
struct RawConstellation {
    points: Vec<Complex64>,
    #[serde(default)]
    prior: Option<Vec<f64>>,
}

impl TryFrom<RawConstellation> for Constellation {
    type Error = crate::Error;

    fn try_from(raw: RawConstellation) -> Result<Self> {
        match raw.prior {
            Some(p) => Self::new(raw.points, p),
            None => Self::uniform(raw.points),
        }
    }
}

impl From<Constellation> for RawConstellation {
    fn from(c: Constellation) -> Self {
        Self { points: c.points, prior: Some(c.prior) }
    }
}

impl Default for Constellation {
    fn default() -> Self {
        Self::qpsk()
    }
}
