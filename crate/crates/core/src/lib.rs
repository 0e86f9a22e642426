//! Sampling-free TDOA localization for millimeter-wave impulse radio.
//!
//! The crate simulates the full chain: Gaussian derivative pulse synthesis
//! ([`pulse`]), a molecular absorption channel with absorption noise
//! ([`channel`]), an energy-detector bank that refines the time of arrival
//! through delayed copies of a single pulse ([`detector`]), least-squares
//! TDOA position fixing ([`locate`]), and a seeded Monte Carlo harness that
//! compares the detector bank with a Nyquist-sampling baseline ([`harness`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod detector;
pub mod error;
pub mod harness;
pub mod locate;
pub mod parallel;
pub mod pulse;
pub mod spectrum;
pub mod trace;

pub use error::{Error, Result};
pub use trace::{SignalTrace, Units};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
