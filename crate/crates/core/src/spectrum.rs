//! Zero-padded power spectra of short real traces.

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::trace::SignalTrace;

/// Squared DFT magnitudes `|X_k|^2` at `k * resolution`, `k = 0..=n/2`.
#[derive(Debug, Clone)]
pub struct PowerSpectrum {
    resolution: f64,
    fft_len: usize,
    step: f64,
    power: Vec<f64>,
}

impl PowerSpectrum {
    /// Spectrum of `trace` zero padded so that bins are at most
    /// `max_resolution` Hz apart.
    pub fn of(trace: &SignalTrace, max_resolution: f64) -> Self {
        let step = trace.step();
        let wanted = (1.0 / (max_resolution * step)).ceil() as usize;
        let fft_len = wanted.max(trace.len()).next_power_of_two();
        let spectrum = real_spectrum(trace.samples(), fft_len);
        Self {
            resolution: 1.0 / (fft_len as f64 * step),
            fft_len,
            step,
            power: spectrum.iter().map(|c| c.norm_sqr()).collect(),
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.resolution
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    /// Bin with the largest power.
    pub fn peak_bin(&self) -> usize {
        crate::trace::argmax(&self.power).map(|(i, _)| i).unwrap_or(0)
    }

    /// Peak frequency refined by a parabola through the three top bins.
    pub fn peak_frequency(&self) -> f64 {
        let k = self.peak_bin();
        if k == 0 || k + 1 >= self.power.len() {
            return self.frequency(k);
        }
        let (a, b, c) = (self.power[k - 1], self.power[k], self.power[k + 1]);
        let denom = a - 2.0 * b + c;
        let offset = if denom.abs() > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
        (k as f64 + offset) * self.resolution
    }

    /// Time-domain energy recovered from the spectrum (Parseval).
    pub fn energy(&self) -> f64 {
        let n = self.power.len();
        let interior: f64 = self.power[1..n - 1].iter().sum();
        let full = self.power[0] + 2.0 * interior + self.power[n - 1];
        self.step * full / self.fft_len as f64
    }

    /// One-sided energy spectral density (J/Hz on a 1 ohm load) at `bin`.
    pub fn energy_density(&self, bin: usize) -> f64 {
        2.0 * self.power[bin] * self.step * self.step
    }

    /// Frequencies where power falls to half the peak on either side of it.
    pub fn half_power_band(&self) -> Result<(f64, f64)> {
        let k = self.peak_bin();
        let half = 0.5 * self.power[k];
        let below = (0..k).rev().find(|&i| self.power[i] < half).ok_or_else(|| {
            Error::Numeric("power spectrum has no half-power crossing below its peak".into())
        })?;
        let above = (k + 1..self.power.len())
            .find(|&i| self.power[i] < half)
            .ok_or_else(|| {
                Error::Numeric("power spectrum has no half-power crossing above its peak".into())
            })?;
        let cross = |lo: usize, hi: usize| {
            let (p0, p1) = (self.power[lo], self.power[hi]);
            let frac = (half - p0) / (p1 - p0);
            self.frequency(lo) + frac * self.resolution * (hi as f64 - lo as f64)
        };
        Ok((cross(below, below + 1), cross(above - 1, above)))
    }
}

/// Forward real FFT of `samples` zero padded to `fft_len`.
pub(crate) fn real_spectrum(samples: &[f64], fft_len: usize) -> Vec<Complex64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let mut input = fft.make_input_vec();
    input[..samples.len()].copy_from_slice(samples);
    let mut output = fft.make_output_vec();
    fft.process(&mut input, &mut output)
        .expect("buffers come from the plan");
    output
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Units;

    #[test]
    fn tone_peak_and_parseval() {
        let step = 1e-3;
        let f0 = 37.0;
        let samples: Vec<f64> = (0..4000)
            .map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 * step).sin())
            .collect();
        let trace = SignalTrace::new(0.0, step, samples, Units::Volts).unwrap();
        let spec = PowerSpectrum::of(&trace, 0.01);
        assert!((spec.peak_frequency() - f0).abs() < 0.05);
        let rel = (spec.energy() - trace.energy()).abs() / trace.energy();
        assert!(rel < 1e-9, "{rel}");
    }
}
