#![allow(dead_code)]

use std::path::PathBuf;

use sftdoa::channel::{ingest_absorption, AbsorptionTable};
use sftdoa::pulse::{Pulse, PulseSpec, DEFAULT_GRID_STEP};
use sftdoa::{SignalTrace, Units};

pub const STEP: f64 = DEFAULT_GRID_STEP;
pub const T_OB: f64 = 10e-9;

pub fn absorption_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/summer_air_h2o_1p86.csv")
}

pub fn paper_table() -> AbsorptionTable {
    ingest_absorption(&absorption_path(), None).unwrap()
}

pub fn paper_pulse() -> Pulse {
    Pulse::synthesize(PulseSpec::new(2, 200e9, 1e-6), STEP).unwrap()
}

/// Pulse samples copied into a zero trace on `[0, T_OB]`, first sample at
/// grid index `offset`.
pub fn place(pulse: &SignalTrace, offset: usize) -> SignalTrace {
    let len = (T_OB / STEP).round() as usize + 1;
    let mut samples = vec![0.0; len];
    for (i, v) in pulse.samples().iter().enumerate() {
        if let Some(s) = samples.get_mut(offset + i) {
            *s = *v;
        }
    }
    SignalTrace::new(0.0, STEP, samples, Units::Volts).unwrap()
}

/// Brute-force windowed-energy argmax: trailing window of `w` samples,
/// searched within `radius` samples of the largest sample, earliest wins.
pub fn peak_energy_index(trace: &SignalTrace, w: usize, radius: usize) -> usize {
    let s = trace.samples();
    let centre = s
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if v.abs() > s[best].abs() { i } else { best });
    let lo = centre.saturating_sub(radius);
    let hi = (centre + radius).min(s.len() - 1);
    let mut best = (lo, f64::NEG_INFINITY);
    for k in lo..=hi {
        let start = (k + 1).saturating_sub(w);
        let x: f64 = s[start..=k].iter().map(|v| v * v).sum::<f64>() * trace.step();
        if x > best.1 {
            best = (k, x);
        }
    }
    best.0
}

/// Cell holding grid time `index * STEP` at `alpha` cells per `T_OB`.
pub fn expected_cell(index: usize, alpha: u64) -> u64 {
    // index * STEP * alpha / T_OB with the ratio formed in integers
    let steps_per_window = (T_OB / STEP).round() as u128;
    ((index as u128 * alpha as u128) / steps_per_window) as u64
}
