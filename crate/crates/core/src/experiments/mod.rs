//! Monte-Carlo harness: per-trial pipelines, sweeps with bootstrap
//! confidence intervals, CSV output and the published figure setups.

mod config;
mod metrics;
mod sweep;
mod trial;

pub use config::{figure_preset, overhead_table, ExperimentConfig, OverheadRow, FIGURE_NAMES};
pub use metrics::{
    compute_nmse_db, compute_nmse_linear, compute_ser, count_errors, fronthaul_overhead_bits, linear_to_db, Scenario,
    NMSE_FLOOR_DB,
};
pub use sweep::{
    bootstrap_ci, read_csv, run_sweep, run_sweep_with_threads, write_csv, NmseAveraging, PointResult, SweepOptions,
    SweepResult, SweepRow, SweepSpec, SweepVar,
};
pub use trial::{
    block_fingerprint, generate_trial, mix64, run_method, run_trial, run_trial_methods, trial_seed, Method, TrialResult,
};
