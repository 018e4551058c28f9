use super::metrics::{compute_nmse_linear, count_errors};
use crate::baselines::{run_lmmse_pfl, run_vb_ce_pfl, run_vb_dd_pfl};
use crate::error::{invalid, Error, Result};
use crate::model::{gen_data, gen_pilots, sample_channel, simulate_uplink, ChannelState, CovarianceSet, TransmissionBlock};
use crate::vb::{quantize_received, run_vb_eq, run_vb_pfl, run_vb_qe};
use crate::{CMatrix, SystemConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::time::Instant;

/// Receiver under test. Quantized methods carry their resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    VbPfl,
    VbQe(u32),
    VbEq(u32),
    LmmsePfl,
    VbDdPfl,
    VbCePfl,
}

impl Method {
    pub fn bits(&self) -> Option<u32> {
        match *self {
            Method::VbQe(b) | Method::VbEq(b) => Some(b),
            _ => None,
        }
    }

    /// Parses `vb_qe:3`; a bare `vb_qe` / `vb_eq` takes `default_bits`.
    pub fn parse_with_default(s: &str, default_bits: Option<u32>) -> Result<Self> {
        let (name, bits) = match s.split_once(':') {
            Some((n, b)) => {
                let b: u32 = b
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad bit count in method '{s}'")))?;
                (n.trim(), Some(b))
            }
            None => (s.trim(), None),
        };
        let need_bits = || {
            bits.or(default_bits)
                .filter(|b| (1..=16).contains(b))
                .ok_or_else(|| Error::Config(format!("method '{s}' needs a resolution in 1..=16")))
        };
        let m = match name {
            "vb_pfl" => Method::VbPfl,
            "vb_qe" => Method::VbQe(need_bits()?),
            "vb_eq" => Method::VbEq(need_bits()?),
            "lmmse_pfl" => Method::LmmsePfl,
            "vb_dd_pfl" => Method::VbDdPfl,
            "vb_ce_pfl" => Method::VbCePfl,
            _ => return Err(Error::Config(format!("unknown method '{s}'"))),
        };
        if bits.is_some() && m.bits().is_none() {
            return Err(Error::Config(format!("method '{name}' takes no resolution")));
        }
        Ok(m)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::parse_with_default(s, None)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::VbPfl => f.write_str("vb_pfl"),
            Method::VbQe(b) => write!(f, "vb_qe:{b}"),
            Method::VbEq(b) => write!(f, "vb_eq:{b}"),
            Method::LmmsePfl => f.write_str("lmmse_pfl"),
            Method::VbDdPfl => f.write_str("vb_dd_pfl"),
            Method::VbCePfl => f.write_str("vb_ce_pfl"),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome of one method on one simulated block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: Method,
    pub trial_index: u64,
    pub seed: u64,
    pub symbol_errors: usize,
    pub symbols_total: usize,
    pub nmse_linear: f64,
    pub wall_time_s: f64,
    /// Set when the method failed; the metrics are then meaningless.
    pub error: Option<String>,
}

impl TrialResult {
    pub fn ser(&self) -> f64 {
        self.symbol_errors as f64 / self.symbols_total as f64
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master_seed`; independent of execution order.
pub fn trial_seed(master_seed: u64, index: u64) -> u64 {
    mix64(mix64(master_seed) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Channel = 0,
    Pilots = 1,
    Data = 2,
    Noise = 3,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// Channel and block of one trial. Each ingredient has its own random
/// stream, so e.g. changing the SNR reuses the same channels, symbols and
/// unit-variance noise draws.
pub fn generate_trial(config: &SystemConfig, priors: &CovarianceSet, seed: u64) -> Result<(ChannelState, TransmissionBlock)> {
    let channel = sample_channel(priors, &mut stream(seed, Stream::Channel));
    let pilots = gen_pilots(config.num_users, config.pilot_len, config.pilot_mode, &mut stream(seed, Stream::Pilots))?;
    let data = gen_data(config.num_users, config.data_len, &config.constellation, &mut stream(seed, Stream::Data));
    let block = simulate_uplink(config, &channel, &pilots, data, &mut stream(seed, Stream::Noise))?;
    Ok((channel, block))
}

/// Hash of every number in a block, for checking that methods saw the same data.
pub fn block_fingerprint(block: &TransmissionBlock) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for m in [&block.pilots, &block.data, &block.r_pilot, &block.r_data] {
        m.shape().hash(&mut h);
        for z in m.iter() {
            z.re.to_bits().hash(&mut h);
            z.im.to_bits().hash(&mut h);
        }
    }
    block.data_indices.hash(&mut h);
    block.noise_var.to_bits().hash(&mut h);
    h.finish()
}

/// Channel estimate and decisions of one method.
pub fn run_method(
    config: &SystemConfig,
    priors: &CovarianceSet,
    method: Method,
    channel: &ChannelState,
    block: &TransmissionBlock,
) -> Result<(CMatrix, Vec<usize>)> {
    let out = match method {
        Method::VbPfl => run_vb_pfl(config, block, priors)?,
        Method::VbQe(b) => {
            let q = quantize_received(block, priors, b)?;
            run_vb_qe(config, block, &q, priors)?
        }
        Method::VbEq(b) => run_vb_eq(config, block, priors, b)?,
        Method::VbDdPfl => run_vb_dd_pfl(config, block, &channel.h, priors)?,
        Method::VbCePfl => run_vb_ce_pfl(config, block, priors)?,
        Method::LmmsePfl => return run_lmmse_pfl(block, priors, &config.constellation),
    };
    Ok((out.h_hat, out.x_hat))
}

fn evaluate(
    config: &SystemConfig,
    priors: &CovarianceSet,
    method: Method,
    channel: &ChannelState,
    block: &TransmissionBlock,
    trial_index: u64,
    seed: u64,
) -> TrialResult {
    let start = Instant::now();
    let outcome = run_method(config, priors, method, channel, block).and_then(|(h_hat, x_hat)| {
        if h_hat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric("non-finite channel estimate".into()));
        }
        let nmse = compute_nmse_linear(&h_hat, &channel.h)?;
        if x_hat.len() != block.data_indices.len() {
            return invalid("decision count mismatch");
        }
        Ok((count_errors(&x_hat, &block.data_indices), nmse))
    });
    let wall = start.elapsed().as_secs_f64();
    let total = block.data_indices.len();
    match outcome {
        Ok((errors, nmse)) => TrialResult {
            method,
            trial_index,
            seed,
            symbol_errors: errors,
            symbols_total: total,
            nmse_linear: nmse,
            wall_time_s: wall,
            error: None,
        },
        Err(e) => TrialResult {
            method,
            trial_index,
            seed,
            symbol_errors: total,
            symbols_total: total,
            nmse_linear: f64::NAN,
            wall_time_s: wall,
            error: Some(format!("{method} trial {trial_index}: {e}")),
        },
    }
}

/// Runs every method on the same simulated block (common random numbers).
pub fn run_trial_methods(
    config: &SystemConfig,
    priors: &CovarianceSet,
    methods: &[Method],
    trial_index: u64,
) -> Vec<TrialResult> {
    let seed = trial_seed(config.master_seed, trial_index);
    match generate_trial(config, priors, seed) {
        Ok((channel, block)) => methods
            .iter()
            .map(|&m| evaluate(config, priors, m, &channel, &block, trial_index, seed))
            .collect(),
        Err(e) => methods
            .iter()
            .map(|&m| TrialResult {
                method: m,
                trial_index,
                seed,
                symbol_errors: 0,
                symbols_total: config.num_users * config.data_len,
                nmse_linear: f64::NAN,
                wall_time_s: 0.0,
                error: Some(format!("trial {trial_index}: {e}")),
            })
            .collect(),
    }
}

/// Full pipeline for one method; deterministic in `(config.master_seed, trial_index)`.
pub fn run_trial(config: &SystemConfig, method: Method, trial_index: u64) -> Result<TrialResult> {
    config.validate()?;
    let priors = CovarianceSet::from_config(config)?;
    Ok(run_trial_methods(config, &priors, &[method], trial_index).remove(0))
}
