//! Uniformly sampled real signals on the dense simulation grid.
//!
//! The modeled receiver never samples anything; the grid only stands in for
//! continuous time. Grid steps are small compared with every time constant
//! the detector works with, so integrals become sums of `value * step`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Fractional-index tolerance used when a time lands on a grid point up to
/// floating point noise.
const GRID_SNAP: f64 = 1e-6;

/// Physical meaning of the samples in a [`SignalTrace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Field amplitude, volts across a 1 ohm reference load.
    Volts,
    /// Integrated energy, volts squared times seconds.
    VoltSquaredSeconds,
}

/// A real time series `samples[i]` at `start_time + i * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    start_time: f64,
    step: f64,
    samples: Vec<f64>,
    units: Units,
}

impl SignalTrace {
    pub fn new(start_time: f64, step: f64, samples: Vec<f64>, units: Units) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Domain(format!("grid step must be positive, got {step}")));
        }
        if !start_time.is_finite() {
            return Err(Error::Domain("trace start time must be finite".into()));
        }
        if samples.is_empty() {
            return Err(Error::Domain("trace must contain at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("trace sample {i} is not finite")));
        }
        Ok(Self {
            start_time,
            step,
            samples,
            units,
        })
    }

    /// All-zero trace covering `len` grid points.
    pub fn zeros(start_time: f64, step: f64, len: usize, units: Units) -> Result<Self> {
        Self::new(start_time, step, vec![0.0; len.max(1)], units)
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.start_time + index as f64 * self.step
    }

    pub fn end_time(&self) -> f64 {
        self.time_at(self.len() - 1)
    }

    /// `step * (len - 1)`.
    pub fn duration(&self) -> f64 {
        self.step * (self.len() - 1) as f64
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.step
    }

    /// Fractional grid position of time `t`.
    pub fn position_of(&self, t: f64) -> f64 {
        (t - self.start_time) / self.step
    }

    /// Smallest (possibly negative) grid index whose time is `>= t`.
    pub fn first_index_at_or_after(&self, t: f64) -> i64 {
        snap_ceil(self.position_of(t))
    }

    /// Largest (possibly negative) grid index whose time is `<= t`.
    pub fn last_index_at_or_before(&self, t: f64) -> i64 {
        snap_floor(self.position_of(t))
    }

    /// Linear interpolation between grid points; `None` outside the trace.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let pos = self.position_of(t);
        let nearest = pos.round();
        if (pos - nearest).abs() < GRID_SNAP {
            return usize::try_from(nearest as i64)
                .ok()
                .and_then(|i| self.samples.get(i).copied());
        }
        if pos < 0.0 {
            return None;
        }
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        match (self.samples.get(lo), self.samples.get(lo + 1)) {
            (Some(a), Some(b)) => Some(a + (b - a) * frac),
            _ => None,
        }
    }

    /// Rectangle-rule energy, `step * sum(v^2)`.
    pub fn energy(&self) -> f64 {
        self.step * self.samples.iter().map(|v| v * v).sum::<f64>()
    }

    /// Energy-weighted mean time.
    pub fn energy_centroid(&self) -> Option<f64> {
        let total: f64 = self.samples.iter().map(|v| v * v).sum();
        if total <= 0.0 {
            return None;
        }
        let weighted: f64 = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, v)| i as f64 * v * v)
            .sum();
        Some(self.start_time + self.step * weighted / total)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.start_time,
            self.step,
            self.samples.iter().map(|v| v * factor).collect(),
            self.units,
        )
    }

    /// Same samples, time axis moved by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            start_time: self.start_time + offset,
            ..self.clone()
        }
    }

    /// Index and value of the largest sample; the earliest one wins ties.
    pub fn argmax(&self) -> (usize, f64) {
        argmax(&self.samples).expect("trace is non-empty")
    }

    /// Writes `time_s,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "time_s,value").map_err(io)?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(out, "{},{}", self.time_at(i), v).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Index of the maximum element; the earliest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// `floor(x)`, treating values within [`GRID_SNAP`] of an integer as that integer.
pub(crate) fn snap_floor(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() < GRID_SNAP {
        r as i64
    } else {
        x.floor() as i64
    }
}

/// `ceil(x)` with the same snapping as [`snap_floor`].
pub(crate) fn snap_ceil(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() < GRID_SNAP {
        r as i64
    } else {
        x.ceil() as i64
    }
}
