//! Gaussian derivative impulse synthesis.
//!
//! A p-th order pulse is `A * d^p/dt^p exp(-t^2 / (2 sigma^2))` with
//! `sigma = sqrt(p) / (2 pi f_c)`, which puts the magnitude spectrum peak
//! `|f|^p exp(-2 pi^2 sigma^2 f^2)` exactly at `f_c`. The amplitude `A` is
//! chosen so that the energy equals `power * T_p`, where `T_p` is the
//! energy-containment duration of the pulse.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::PowerSpectrum;
use crate::trace::{SignalTrace, Units};

pub const DEFAULT_ENERGY_FRACTION: f64 = 0.9999;

/// Default dense-grid step, 0.05 ps.
pub const DEFAULT_GRID_STEP: f64 = 5e-14;

/// Frequency resolution used for spectral measurements of single pulses.
const SPECTRAL_RESOLUTION_HZ: f64 = 5e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Derivative order `p`.
    pub order: u32,
    pub center_frequency_hz: f64,
    /// Average power over the pulse duration, watts.
    pub power_w: f64,
    /// Energy share that defines the pulse duration `T_p`.
    #[serde(default = "default_fraction")]
    pub energy_fraction: f64,
}

fn default_fraction() -> f64 {
    DEFAULT_ENERGY_FRACTION
}

impl PulseSpec {
    pub fn new(order: u32, center_frequency_hz: f64, power_w: f64) -> Self {
        Self {
            order,
            center_frequency_hz,
            power_w,
            energy_fraction: DEFAULT_ENERGY_FRACTION,
        }
    }

    pub fn with_energy_fraction(mut self, fraction: f64) -> Self {
        self.energy_fraction = fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency_hz > 0.0) || !self.center_frequency_hz.is_finite() {
            return Err(Error::Config(format!(
                "pulse center frequency must be positive, got {}",
                self.center_frequency_hz
            )));
        }
        if !(self.power_w > 0.0) || !self.power_w.is_finite() {
            return Err(Error::Config(format!(
                "pulse power must be positive, got {}",
                self.power_w
            )));
        }
        check_fraction(self.energy_fraction).map_err(|e| Error::Config(e.to_string()))?;
        if self.order == 0 {
            return Err(Error::Config(
                "order 0 places the spectral peak at DC; use order >= 1 to center the pulse on f_c"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Standard deviation of the underlying Gaussian.
    pub fn sigma(&self) -> f64 {
        (self.order as f64).sqrt() / (2.0 * PI * self.center_frequency_hz)
    }
}

/// A synthesized pulse together with its duration.
#[derive(Debug, Clone)]
pub struct Pulse {
    pub spec: PulseSpec,
    pub trace: SignalTrace,
    /// `T_p`, the centered energy-containment duration.
    pub duration: f64,
}

impl Pulse {
    pub fn synthesize(spec: PulseSpec, step: f64) -> Result<Self> {
        spec.validate()?;
        let max_step = 1.0 / (20.0 * spec.center_frequency_hz);
        if step > max_step * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "grid step {step:.3e} s is too coarse for f_c = {:.3e} Hz (need <= {max_step:.3e} s)",
                spec.center_frequency_hz
            )));
        }
        let sigma = spec.sigma();
        let p = spec.order as usize;
        let half_width = ((2 * p + 1) as f64).sqrt() * sigma + 7.0 * sigma;
        let half = (half_width / step).ceil() as i64;
        let sign = if p.is_multiple_of(2) { 1.0 } else { -1.0 };
        let shape: Vec<f64> = (-half..=half)
            .map(|i| {
                let x = i as f64 * step / sigma;
                sign * hermite_he(p, x) * (-0.5 * x * x).exp()
            })
            .collect();
        let unit = SignalTrace::new(-(half as f64) * step, step, shape, Units::Volts)?;
        let duration = effective_duration(&unit, spec.energy_fraction)?;
        let amplitude = (spec.power_w * duration / unit.energy()).sqrt();
        Ok(Self {
            spec,
            trace: unit.scaled(amplitude)?,
            duration,
        })
    }

    /// Energy, `power * T_p` up to quadrature error.
    pub fn energy(&self) -> f64 {
        self.trace.energy()
    }
}

/// Samples of `g_p(t)` centered at `t = 0` on a grid of spacing `step`.
pub fn generate_pulse(spec: PulseSpec, step: f64) -> Result<SignalTrace> {
    Pulse::synthesize(spec, step).map(|p| p.trace)
}

/// Probabilists' Hermite polynomial `He_n(x)`.
fn hermite_he(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.99..1.0).contains(&fraction) {
        return Err(Error::Domain(format!(
            "energy fraction must lie in [0.99, 1), got {fraction}"
        )));
    }
    Ok(())
}

/// Length of the shortest interval centered on the energy centroid that
/// holds `fraction` of the trace energy.
///
/// Each sample's energy is spread uniformly over its grid cell, which makes
/// the contained energy a continuous function of the half width.
pub fn effective_duration(trace: &SignalTrace, fraction: f64) -> Result<f64> {
    check_fraction(fraction)?;
    let centroid = trace
        .energy_centroid()
        .ok_or_else(|| Error::Domain("cannot measure the duration of a zero-energy trace".into()))?;
    let step = trace.step();
    let mut cumulative = Vec::with_capacity(trace.len() + 1);
    cumulative.push(0.0);
    let mut acc = 0.0;
    for v in trace.samples() {
        acc += v * v;
        cumulative.push(acc);
    }
    let total = acc;
    // cumulative energy up to time t, samples occupy [t_i - step/2, t_i + step/2]
    let energy_before = |t: f64| -> f64 {
        let pos = (t - trace.start_time()) / step + 0.5;
        if pos <= 0.0 {
            return 0.0;
        }
        let whole = pos.floor() as usize;
        if whole >= trace.len() {
            return total;
        }
        let frac = pos - whole as f64;
        cumulative[whole] + frac * (cumulative[whole + 1] - cumulative[whole])
    };
    let target = fraction * total;
    let mut lo = 0.0;
    let mut hi = (centroid - trace.start_time())
        .max(trace.end_time() - centroid)
        + step;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if energy_before(centroid + mid) - energy_before(centroid - mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-9 * step {
            break;
        }
    }
    Ok(2.0 * hi)
}

/// Half-power band edges `(f_low, f_high)` of a trace.
pub fn half_power_band(trace: &SignalTrace) -> Result<(f64, f64)> {
    if trace.samples().iter().all(|&v| v == 0.0) {
        return Err(Error::Domain("half-power band of an all-zero trace".into()));
    }
    PowerSpectrum::of(trace, SPECTRAL_RESOLUTION_HZ).half_power_band()
}

/// Frequency of the magnitude-spectrum maximum.
pub fn spectral_peak(trace: &SignalTrace) -> f64 {
    PowerSpectrum::of(trace, SPECTRAL_RESOLUTION_HZ).peak_frequency()
}
