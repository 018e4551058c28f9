//! Variational-Bayes joint channel estimation and data detection (JED) for the
//! uplink of a cell-free massive MIMO network.
//!
//! Three fronthaul scenarios are covered:
//!
//! * **PFL**: access points forward unquantized received signals.
//! * **Q-E**: access points quantize received signals to `b` bits, the central
//!   processor runs JED on the quantized data.
//! * **E-Q**: access points estimate their channels locally from pilots,
//!   quantize the estimates and the data signals, and the central processor
//!   finishes JED over the data block.
//!
//! The crate is organised bottom-up: [`model`] generates scenarios,
//! [`quantizer`] and [`truncgauss`] provide the quantization and truncated
//! Gaussian machinery, [`vb`] holds the coordinate-ascent engine,
//! [`baselines`] the reference detectors and [`experiments`] the Monte-Carlo
//! harness behind the `cfvbjed` binary.

pub mod baselines;
pub mod constellation;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod quantizer;
pub mod truncgauss;
pub mod vb;

pub use constellation::Constellation;
pub use error::{Error, Result};
pub use model::{ChannelState, SystemConfig, TransmissionBlock};

pub use num_complex::Complex64;

/// Dense complex matrix used throughout the crate (column-major).
pub type CMatrix = nalgebra::DMatrix<Complex64>;
