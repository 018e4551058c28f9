use super::metrics::linear_to_db;
use super::trial::{mix64, run_trial_methods, Method, TrialResult};
use crate::error::{invalid, Error, Result};
use crate::model::CovarianceSet;
use crate::SystemConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

/// System parameter varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    SnrDb,
    PilotLen,
    DataLen,
    NumUsers,
    NumAps,
}

impl SweepVar {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::SnrDb => "snr_db",
            SweepVar::PilotLen => "pilot_len",
            SweepVar::DataLen => "data_len",
            SweepVar::NumUsers => "num_users",
            SweepVar::NumAps => "num_aps",
        }
    }

    /// `base` with this variable set to `value`.
    pub fn apply(&self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut c = base.clone();
        if *self == SweepVar::SnrDb {
            if value.is_nan() {
                return invalid("SNR grid value is NaN");
            }
            c.snr_db = value;
            return Ok(c);
        }
        if !(value >= 1.0 && value.fract() == 0.0 && value < 1e9) {
            return invalid(format!("{} grid value {value} is not a positive integer", self.name()));
        }
        let n = value as usize;
        match self {
            SweepVar::PilotLen => c.pilot_len = n,
            SweepVar::DataLen => c.data_len = n,
            SweepVar::NumUsers => c.num_users = n,
            SweepVar::NumAps => c.num_aps = n,
            SweepVar::SnrDb => unreachable!(),
        }
        if c.large_scale.as_ref().is_some_and(|b| b.len() != c.num_users * c.num_aps) {
            return invalid(format!("large_scale fading has a fixed K*L length and cannot be swept over {}", self.name()));
        }
        Ok(c)
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr_db" => Ok(SweepVar::SnrDb),
            "pilot_len" => Ok(SweepVar::PilotLen),
            "data_len" => Ok(SweepVar::DataLen),
            "num_users" => Ok(SweepVar::NumUsers),
            "num_aps" => Ok(SweepVar::NumAps),
            _ => Err(Error::Config(format!("unknown sweep variable '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub var: SweepVar,
    pub values: Vec<f64>,
}

/// How per-trial NMSE values are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmseAveraging {
    /// Mean of linear NMSE, then dB.
    #[default]
    Linear,
    /// Mean of per-trial dB values.
    Db,
}

impl FromStr for NmseAveraging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(NmseAveraging::Linear),
            "db" => Ok(NmseAveraging::Db),
            _ => Err(Error::Config(format!("nmse averaging must be 'linear' or 'db', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub trials: usize,
    pub nmse_avg: NmseAveraging,
    /// Two-sided confidence level of the percentile bootstrap.
    pub ci_level: f64,
    pub bootstrap_resamples: usize,
    /// Fill the `wall_time_s` column (makes the CSV run-dependent).
    pub timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { trials: 100, nmse_avg: NmseAveraging::Linear, ci_level: 0.95, bootstrap_resamples: 1000, timing: false }
    }
}

impl SweepOptions {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return invalid("ci_level must lie in (0, 1)");
        }
        if self.bootstrap_resamples == 0 {
            return invalid("bootstrap_resamples must be at least 1");
        }
        Ok(())
    }
}

/// One CSV line: aggregates of one method at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub method: String,
    pub bits: Option<u32>,
    pub trials: usize,
    pub ser_mean: f64,
    pub ser_ci_lo: f64,
    pub ser_ci_hi: f64,
    pub nmse_db_mean: f64,
    pub nmse_ci_lo: f64,
    pub nmse_ci_hi: f64,
    pub failures: usize,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub value: f64,
    pub config: SystemConfig,
    /// `trials[m][n]`: method `m`, trial `n`.
    pub trials: Vec<Vec<TrialResult>>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub var: SweepVar,
    pub methods: Vec<Method>,
    pub points: Vec<PointResult>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, value: f64, method: Method) -> Option<&SweepRow> {
        let name = method.to_string();
        self.rows.iter().find(|r| r.sweep_value == value && r.method == name)
    }

    pub fn total_trials(&self) -> usize {
        self.points.iter().map(|p| p.trials.iter().map(Vec::len).sum::<usize>()).sum()
    }

    pub fn total_failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }

    pub fn failure_fraction(&self) -> f64 {
        self.total_failures() as f64 / self.total_trials().max(1) as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Percentile bootstrap CI of `stat(mean of resample)`, widened if needed so
/// that it contains `stat(mean)`.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64, stat: impl Fn(f64) -> f64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let point = stat(mean(values));
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let s: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            stat(s / n as f64)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    let pick = |q: f64| stats[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    (pick(alpha).min(point), pick(1.0 - alpha).max(point))
}

fn aggregate(
    var: SweepVar,
    value: f64,
    method: Method,
    results: &[TrialResult],
    opts: &SweepOptions,
    seed: u64,
) -> SweepRow {
    let ok: Vec<&TrialResult> = results.iter().filter(|r| !r.failed()).collect();
    let ser: Vec<f64> = ok.iter().map(|r| r.ser()).collect();
    let nmse: Vec<f64> = ok.iter().map(|r| r.nmse_linear).collect();
    let (ser_lo, ser_hi) = bootstrap_ci(&ser, opts.ci_level, opts.bootstrap_resamples, seed, |m| m);
    let (nmse_mean, (nmse_lo, nmse_hi)) = match opts.nmse_avg {
        NmseAveraging::Linear => (
            if nmse.is_empty() { f64::NAN } else { linear_to_db(mean(&nmse)) },
            bootstrap_ci(&nmse, opts.ci_level, opts.bootstrap_resamples, seed ^ 1, linear_to_db),
        ),
        NmseAveraging::Db => {
            let db: Vec<f64> = nmse.iter().map(|&v| linear_to_db(v)).collect();
            (
                if db.is_empty() { f64::NAN } else { mean(&db) },
                bootstrap_ci(&db, opts.ci_level, opts.bootstrap_resamples, seed ^ 1, |m| m),
            )
        }
    };
    SweepRow {
        sweep_var: var.name().to_string(),
        sweep_value: value,
        method: method.to_string(),
        bits: method.bits(),
        trials: results.len(),
        ser_mean: if ser.is_empty() { f64::NAN } else { mean(&ser) },
        ser_ci_lo: ser_lo,
        ser_ci_hi: ser_hi,
        nmse_db_mean: nmse_mean,
        nmse_ci_lo: nmse_lo,
        nmse_ci_hi: nmse_hi,
        failures: results.len() - ok.len(),
        wall_time_s: opts.timing.then(|| results.iter().map(|r| r.wall_time_s).sum()),
    }
}

/// Runs `opts.trials` trials of every method at every grid point. Trial `n`
/// uses the same seed at every grid point and for every method. Work is
/// spread over the current rayon pool; the result does not depend on its size.
pub fn run_sweep(base: &SystemConfig, spec: &SweepSpec, methods: &[Method], opts: &SweepOptions) -> Result<SweepResult> {
    opts.validate()?;
    if spec.values.is_empty() {
        return invalid("sweep grid is empty");
    }
    if methods.is_empty() {
        return invalid("no methods to run");
    }
    let mut configs = Vec::with_capacity(spec.values.len());
    for &v in &spec.values {
        let c = spec.var.apply(base, v)?;
        c.validate()?;
        let priors = CovarianceSet::from_config(&c)?;
        configs.push((c, priors));
    }
    let trials = opts.trials;
    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|p| (0..trials).map(move |n| (p, n))).collect();
    let flat: Vec<Vec<TrialResult>> = jobs
        .par_iter()
        .map(|&(p, n)| run_trial_methods(&configs[p].0, &configs[p].1, methods, n as u64))
        .collect();

    let mut points = Vec::with_capacity(configs.len());
    let mut rows = Vec::new();
    let mut it = flat.into_iter();
    for (p, (config, _)) in configs.into_iter().enumerate() {
        let mut per_method: Vec<Vec<TrialResult>> = vec![Vec::with_capacity(trials); methods.len()];
        for res in it.by_ref().take(trials) {
            for (m, r) in res.into_iter().enumerate() {
                per_method[m].push(r);
            }
        }
        let value = spec.values[p];
        for (m, &method) in methods.iter().enumerate() {
            let seed = mix64(base.master_seed ^ mix64(((p as u64) << 32) | m as u64));
            rows.push(aggregate(spec.var, value, method, &per_method[m], opts, seed));
        }
        points.push(PointResult { value, config, trials: per_method });
    }
    Ok(SweepResult { var: spec.var, methods: methods.to_vec(), points, rows })
}

/// [`run_sweep`] on a dedicated pool of `threads` workers.
pub fn run_sweep_with_threads(
    base: &SystemConfig,
    spec: &SweepSpec,
    methods: &[Method],
    opts: &SweepOptions,
    threads: usize,
) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| run_sweep(base, spec, methods, opts))
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
