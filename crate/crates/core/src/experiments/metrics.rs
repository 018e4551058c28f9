use crate::error::{invalid, Result};
use crate::linalg::frobenius_sq;
use crate::CMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Reported NMSE when the estimate is exact.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Fraction of mismatched symbol decisions.
pub fn compute_ser(x_hat: &[usize], x_true: &[usize]) -> Result<f64> {
    if x_hat.len() != x_true.len() || x_true.is_empty() {
        return invalid("compute_ser: decision vectors differ in length or are empty");
    }
    Ok(count_errors(x_hat, x_true) as f64 / x_true.len() as f64)
}

pub fn count_errors(x_hat: &[usize], x_true: &[usize]) -> usize {
    x_hat.iter().zip(x_true).filter(|(a, b)| a != b).count()
}

/// `‖H - Ĥ‖²_F / ‖H‖²_F`.
pub fn compute_nmse_linear(h_hat: &CMatrix, h: &CMatrix) -> Result<f64> {
    if h_hat.shape() != h.shape() {
        return invalid("compute_nmse: shape mismatch");
    }
    let den = frobenius_sq(h);
    if den == 0.0 {
        return invalid("compute_nmse: true channel is zero");
    }
    Ok(frobenius_sq(&(h - h_hat)) / den)
}

pub fn linear_to_db(v: f64) -> f64 {
    if v > 0.0 {
        (10.0 * v.log10()).max(NMSE_FLOOR_DB)
    } else {
        NMSE_FLOOR_DB
    }
}

pub fn compute_nmse_db(h_hat: &CMatrix, h: &CMatrix) -> Result<f64> {
    compute_nmse_linear(h_hat, h).map(linear_to_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Pfl,
    Qe,
    Eq,
}

impl FromStr for Scenario {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "pfl" => Ok(Scenario::Pfl),
            "qe" => Ok(Scenario::Qe),
            "eq" => Ok(Scenario::Eq),
            _ => invalid(format!("unknown fronthaul scenario '{s}'")),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Pfl => "pfl",
            Scenario::Qe => "qe",
            Scenario::Eq => "eq",
        })
    }
}

/// Fronthaul bits per coherence block: PFL forwards `b_hi`-bit samples of
/// every received signal, Q-E forwards `b`-bit samples, E-Q forwards `b`-bit
/// channel estimates (`K` per antenna) plus `b`-bit data samples.
#[allow(clippy::too_many_arguments)]
pub fn fronthaul_overhead_bits(
    scenario: Scenario,
    b_hi: u64,
    b: u64,
    m: u64,
    l: u64,
    k: u64,
    t_p: u64,
    t_d: u64,
) -> u64 {
    match scenario {
        Scenario::Pfl => b_hi * m * l * (t_p + t_d),
        Scenario::Qe => b * m * l * (t_p + t_d),
        Scenario::Eq => b * m * l * (k + t_d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Complex64;

    #[test]
    fn ser_examples() {
        let x: Vec<usize> = (0..2048).map(|i| i % 4).collect();
        assert_eq!(compute_ser(&x, &x).unwrap(), 0.0);
        let wrong: Vec<usize> = x.iter().map(|v| (v + 1) % 4).collect();
        assert_eq!(compute_ser(&wrong, &x).unwrap(), 1.0);
        let mut three = x.clone();
        for v in three.iter_mut().take(3) {
            *v = (*v + 2) % 4;
        }
        assert_eq!(compute_ser(&three, &x).unwrap(), 0.00146484375);
    }

    #[test]
    fn nmse_examples() {
        let h = CMatrix::from_fn(3, 2, |r, c| Complex64::new(r as f64 + 1.0, c as f64 - 0.5));
        assert_eq!(compute_nmse_db(&h, &h).unwrap(), NMSE_FLOOR_DB);
        assert!(compute_nmse_db(&CMatrix::zeros(3, 2), &h).unwrap().abs() < 1e-12);
        assert!((compute_nmse_db(&h.scale(0.9), &h).unwrap() + 20.0).abs() < 1e-9);
        assert!(compute_nmse_db(&h, &CMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn overhead_defaults() {
        assert_eq!(fronthaul_overhead_bits(Scenario::Pfl, 10, 3, 4, 8, 16, 32, 128), 51_200);
        assert_eq!(fronthaul_overhead_bits(Scenario::Qe, 10, 3, 4, 8, 16, 32, 128), 15_360);
        assert_eq!(fronthaul_overhead_bits(Scenario::Eq, 10, 3, 4, 8, 16, 32, 128), 13_824);
        assert!("xx".parse::<Scenario>().is_err());
        assert_eq!("E-Q".parse::<Scenario>().unwrap(), Scenario::Eq);
    }
}
