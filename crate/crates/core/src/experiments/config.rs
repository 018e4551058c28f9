use super::metrics::{fronthaul_overhead_bits, Scenario};
use super::sweep::{NmseAveraging, SweepOptions, SweepSpec, SweepVar};
use super::trial::Method;
use crate::error::{Error, Result};
use crate::SystemConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn default_trials() -> usize {
    100
}

fn default_ci_level() -> f64 {
    0.95
}

fn default_resamples() -> usize {
    1000
}

/// Contents of a `run --config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub system: SystemConfig,
    pub sweep: SweepSpec,
    /// Method ids such as `vb_pfl` or `vb_qe:3`; a bare `vb_qe` uses
    /// `system.quant_bits`.
    pub methods: Vec<String>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub nmse_avg: NmseAveraging,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods listed".into()));
        }
        self.methods
            .iter()
            .map(|m| Method::parse_with_default(m, self.system.quant_bits))
            .collect()
    }

    pub fn options(&self) -> SweepOptions {
        SweepOptions {
            trials: self.trials,
            nmse_avg: self.nmse_avg,
            ci_level: self.ci_level,
            bootstrap_resamples: self.bootstrap_resamples,
            timing: self.timing,
        }
    }

    /// Checks everything that can be checked without running a trial.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::InvalidParameter(m) => Error::Config(m),
            other => other,
        };
        self.system.validate().map_err(cfg_err)?;
        self.options().validate().map_err(cfg_err)?;
        self.parsed_methods()?;
        if self.sweep.values.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        for &v in &self.sweep.values {
            self.sweep.var.apply(&self.system, v).and_then(|c| c.validate()).map_err(cfg_err)?;
        }
        Ok(())
    }
}

pub const FIGURE_NAMES: [&str; 9] = [
    "ser-vs-snr",
    "ser-vs-tp",
    "ser-vs-td",
    "ser-vs-k",
    "ser-vs-l",
    "nmse-vs-snr",
    "nmse-vs-tp",
    "nmse-vs-td",
    "overhead",
];

fn snr_grid() -> Vec<f64> {
    (0..=10).map(|i| 2.0 * i as f64).collect()
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Sweep reproducing one of the published figures. `overhead` has no sweep;
/// see [`overhead_table`].
pub fn figure_preset(name: &str) -> Result<ExperimentConfig> {
    let three_bit = strings(&["lmmse_pfl", "vb_pfl", "vb_qe:3", "vb_eq:3"]);
    let (var, values, methods) = match name {
        "ser-vs-snr" => (
            SweepVar::SnrDb,
            snr_grid(),
            strings(&["lmmse_pfl", "vb_pfl", "vb_dd_pfl", "vb_qe:1", "vb_qe:2", "vb_qe:3", "vb_eq:1", "vb_eq:2", "vb_eq:3"]),
        ),
        "nmse-vs-snr" => (
            SweepVar::SnrDb,
            snr_grid(),
            strings(&["lmmse_pfl", "vb_pfl", "vb_ce_pfl", "vb_qe:1", "vb_qe:2", "vb_qe:3", "vb_eq:1", "vb_eq:2", "vb_eq:3"]),
        ),
        "ser-vs-tp" | "nmse-vs-tp" => (SweepVar::PilotLen, vec![10.0, 16.0, 24.0, 32.0, 40.0, 48.0, 56.0, 64.0], three_bit),
        "ser-vs-td" | "nmse-vs-td" => (SweepVar::DataLen, vec![16.0, 32.0, 64.0, 96.0, 128.0, 160.0, 192.0], three_bit),
        "ser-vs-k" => (SweepVar::NumUsers, vec![12.0, 16.0, 20.0, 24.0, 28.0, 32.0], three_bit),
        "ser-vs-l" => (SweepVar::NumAps, vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0], three_bit),
        "overhead" => return Err(Error::Config("the overhead figure is a table, not a sweep".into())),
        _ => {
            return Err(Error::Config(format!(
                "unknown figure '{name}'; expected one of {}",
                FIGURE_NAMES.join(", ")
            )))
        }
    };
    Ok(ExperimentConfig {
        system: SystemConfig::default(),
        sweep: SweepSpec { var, values },
        methods,
        trials: default_trials(),
        nmse_avg: NmseAveraging::Linear,
        ci_level: default_ci_level(),
        bootstrap_resamples: default_resamples(),
        timing: false,
        out: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub scenario: Scenario,
    pub bits: u64,
    pub overhead_bits: u64,
}

/// Fronthaul load per coherence block of PFL (10-bit samples) and of Q-E /
/// E-Q at 1 to 4 bits for the dimensions of `c`.
pub fn overhead_table(c: &SystemConfig) -> Vec<OverheadRow> {
    let (m, l, k, tp, td) = (
        c.antennas_per_ap as u64,
        c.num_aps as u64,
        c.num_users as u64,
        c.pilot_len as u64,
        c.data_len as u64,
    );
    let mut rows = vec![OverheadRow {
        scenario: Scenario::Pfl,
        bits: 10,
        overhead_bits: fronthaul_overhead_bits(Scenario::Pfl, 10, 10, m, l, k, tp, td),
    }];
    for s in [Scenario::Qe, Scenario::Eq] {
        for b in 1..=4 {
            rows.push(OverheadRow { scenario: s, bits: b, overhead_bits: fronthaul_overhead_bits(s, 10, b, m, l, k, tp, td) });
        }
    }
    rows
}
