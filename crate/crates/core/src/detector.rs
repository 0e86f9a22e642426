//! Continuous-time moving average (CTMA) detector bank and the iterative
//! time-of-arrival refinement driven by voltage controlled delays.
//!
//! A CTMA integrates the squared input over a trailing window,
//! `x(t) = int_{t-W}^{t} v(u)^2 du`, and holds the largest value it sees
//! during its observation interval. With `M` branches the bank splits the
//! current search interval into `M` equal cells; branch `m` watches cell
//! `M - m` counted from the start, so branch `M` watches the earliest cell.
//! The branch with the largest held value wins, the search interval shrinks
//! to its cell, and a fixed delay line re-presents the same received pulse
//! for the next pass. After `Q + 1` passes the estimate is
//!
//! ```text
//! tau = sum_{q=1}^{Q+1} (M - m_q) * T_ob / M^q
//! ```
//!
//! which is the start of a cell of width `T_ob / M^(Q+1)`.
//!
//! On the simulation grid all integrals are rectangle sums over whole grid
//! steps; a window of `W` seconds covers `round(W / step)` samples ending at
//! (and including) the evaluation point.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{snap_ceil, snap_floor, SignalTrace, Units};

/// LPF constant: `beta = LPF_BETA_SCALE / T_p`.
pub const LPF_BETA_SCALE: f64 = 1.4615;

/// The resolution cell must span at least this many grid steps.
pub const MIN_STEPS_PER_CELL: f64 = 4.0;

/// Integration length of each CTMA branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationWindow {
    /// Every branch integrates over the pulse duration `T_p`; the
    /// per-iteration observation interval only gates when the output is
    /// held.
    #[default]
    PulseDuration,
    /// Iteration `q` integrates over its own observation interval
    /// `T_ob / M^q`.
    Observation,
}

/// Dimensioning of the detector bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorBankConfig {
    /// `M`, CTMA branches per iteration.
    pub branches: u32,
    /// `Q`, fixed delay stages; the bank runs `Q + 1` iterations.
    pub stages: u32,
    /// `T_ob`, seconds.
    pub observation: f64,
    /// `T_p`, seconds.
    pub pulse_duration: f64,
    #[serde(default)]
    pub integration: IntegrationWindow,
}

impl DetectorBankConfig {
    pub fn new(branches: u32, stages: u32, observation: f64, pulse_duration: f64) -> Result<Self> {
        let cfg = Self {
            branches,
            stages,
            observation,
            pulse_duration,
            integration: IntegrationWindow::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_integration(mut self, integration: IntegrationWindow) -> Self {
        self.integration = integration;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches < 2 {
            return Err(Error::Config(format!("need at least 2 CTMA branches, got {}", self.branches)));
        }
        if !(self.pulse_duration > 0.0) {
            return Err(Error::Config("pulse duration must be positive".into()));
        }
        if !(self.observation > self.pulse_duration) || !self.observation.is_finite() {
            return Err(Error::Config(format!(
                "observation window {:.3e} s must exceed the pulse duration {:.3e} s",
                self.observation, self.pulse_duration
            )));
        }
        match self.checked_alpha() {
            Some(a) if a <= 1 << 53 => Ok(()),
            _ => Err(Error::Config(format!(
                "M^(Q+1) = {}^{} overflows the supported range",
                self.branches,
                self.stages + 1
            ))),
        }
    }

    fn checked_alpha(&self) -> Option<u64> {
        (self.branches as u64).checked_pow(self.stages + 1)
    }

    /// `M^(Q+1)`.
    pub fn alpha(&self) -> u64 {
        self.checked_alpha().expect("validated on construction")
    }

    pub fn iterations(&self) -> u32 {
        self.stages + 1
    }

    /// Observation interval of iteration `q` (1-based), `T_ob / M^q`.
    pub fn cell_width(&self, q: u32) -> f64 {
        self.observation / (self.branches as u64).pow(q) as f64
    }

    /// Resolution quantum `T_ob / M^(Q+1)`.
    pub fn resolution(&self) -> f64 {
        self.observation / self.alpha() as f64
    }

    pub fn check_resolvable(&self, step: f64) -> Result<()> {
        let delta = self.resolution();
        if delta < MIN_STEPS_PER_CELL * step * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "resolution T_ob/M^(Q+1) = {delta:.3e} s is below {MIN_STEPS_PER_CELL} grid steps of {step:.3e} s (M={}, Q={})",
                self.branches, self.stages
            )));
        }
        Ok(())
    }
}

/// Outcome of the iterative refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToaEstimate {
    /// Winning branch `m_q` of each iteration, in `1..=M`.
    pub selected: Vec<u32>,
    /// Running estimate after each iteration.
    pub per_iteration: Vec<f64>,
    /// Final estimate.
    pub tau: f64,
    /// Index of the final resolution cell, so `tau = cell * T_ob / M^(Q+1)`.
    pub cell: u64,
}

impl ToaEstimate {
    pub fn from_selection(selected: Vec<u32>, branches: u32, observation: f64) -> Self {
        let m = branches as u64;
        let mut per_iteration = Vec::with_capacity(selected.len());
        let mut tau = 0.0;
        let mut cell = 0u64;
        for (q, &chosen) in selected.iter().enumerate() {
            tau += (m - chosen as u64) as f64 * observation / m.pow(q as u32 + 1) as f64;
            cell = cell * m + (m - chosen as u64);
            per_iteration.push(tau);
        }
        Self {
            selected,
            per_iteration,
            tau,
            cell,
        }
    }

    /// `sum_q (M - m_q) T_ob / M^q` recomputed from the selected branches.
    pub fn reconstruct(selected: &[u32], branches: u32, observation: f64) -> f64 {
        let m = branches as u64;
        selected.iter().enumerate().fold(0.0, |tau, (q, &chosen)| {
            tau + (m - chosen as u64) as f64 * observation / m.pow(q as u32 + 1) as f64
        })
    }
}

// ---------------------------------------------------------------------------
// Windowed energy
// ---------------------------------------------------------------------------

/// Running energy of a trace; evaluates `x(t)` for any window in O(1).
///
/// Samples before the trace start count as zero.
#[derive(Debug, Clone)]
pub struct EnergyProfile {
    start_time: f64,
    step: f64,
    prefix: Vec<f64>,
}

impl EnergyProfile {
    pub fn new(v: &SignalTrace) -> Self {
        let mut prefix = Vec::with_capacity(v.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for s in v.samples() {
            acc += s * s;
            prefix.push(acc);
        }
        Self {
            start_time: v.start_time(),
            step: v.step(),
            prefix,
        }
    }

    pub fn len(&self) -> usize {
        self.prefix.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.start_time + index as f64 * self.step
    }

    pub fn end_time(&self) -> f64 {
        self.time_at(self.len() - 1)
    }

    /// Samples covered by a window of `window` seconds.
    pub fn window_samples(&self, window: f64) -> usize {
        ((window / self.step).round() as usize).max(1)
    }

    /// `x` at grid index `k` for a window of `w` samples.
    pub fn value(&self, k: usize, w: usize) -> f64 {
        self.step * (self.prefix[k + 1] - self.prefix[(k + 1).saturating_sub(w)])
    }

    /// Largest `x` over `indices`, earliest index on ties.
    pub fn max_over(&self, indices: Range<usize>, w: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for k in indices {
            let v = self.value(k, w);
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((k, v)),
            }
        }
        best
    }

    /// Grid indices with times in `[from, to)`, clipped to the trace.
    pub fn half_open(&self, from: f64, to: f64) -> Range<usize> {
        let clip = |i: i64| i.clamp(0, self.len() as i64) as usize;
        let lo = snap_ceil((from - self.start_time) / self.step);
        let hi = snap_ceil((to - self.start_time) / self.step);
        clip(lo)..clip(hi)
    }

    /// Materializes `x(t)` for a window of `window` seconds.
    pub fn to_trace(&self, window: f64) -> Result<SignalTrace> {
        let w = self.window_samples(window);
        let samples = (0..self.len()).map(|k| self.value(k, w)).collect();
        SignalTrace::new(self.start_time, self.step, samples, Units::VoltSquaredSeconds)
    }
}

/// Largest CTMA output over `[t_start, t_end]` and the earliest grid time
/// where it occurs.
pub fn ctma_output(v: &SignalTrace, window: f64, interval: (f64, f64)) -> Result<(f64, f64)> {
    let (t_start, t_end) = interval;
    if !(t_end > t_start) {
        return Err(Error::Domain(format!("empty CTMA interval [{t_start:.6e}, {t_end:.6e}]")));
    }
    if !(window > 0.0) {
        return Err(Error::Domain("CTMA window must be positive".into()));
    }
    let outside = || Error::OutsideTrace {
        start: t_start - window,
        end: t_end,
        trace_start: v.start_time(),
        trace_end: v.end_time(),
    };
    let profile = EnergyProfile::new(v);
    let w = profile.window_samples(window);
    let first = v.first_index_at_or_after(t_start);
    let last = v.last_index_at_or_before(t_end);
    if first - (w as i64) + 1 < 0 || last >= v.len() as i64 || last < first {
        return Err(outside());
    }
    let (k, value) = profile
        .max_over(first as usize..last as usize + 1, w)
        .ok_or_else(outside)?;
    Ok((value, v.time_at(k)))
}

// ---------------------------------------------------------------------------
// Iterative TOA
// ---------------------------------------------------------------------------

/// Runs the `Q + 1` refinement passes over one received trace.
pub fn iterative_toa(v: &SignalTrace, cfg: &DetectorBankConfig) -> Result<ToaEstimate> {
    iterative_toa_profile(&EnergyProfile::new(v), cfg)
}

/// [`iterative_toa`] on a precomputed energy profile, so several bank
/// configurations can share one pass over the samples.
pub fn iterative_toa_profile(profile: &EnergyProfile, cfg: &DetectorBankConfig) -> Result<ToaEstimate> {
    cfg.validate()?;
    cfg.check_resolvable(profile.step())?;
    if snap_floor((0.0 - profile.start_time) / profile.step) < 0 || profile.end_time() < cfg.observation - profile.step() {
        return Err(Error::OutsideTrace {
            start: 0.0,
            end: cfg.observation,
            trace_start: profile.start_time,
            trace_end: profile.end_time(),
        });
    }

    let m = cfg.branches as u64;
    let pulse_window = profile.window_samples(cfg.pulse_duration);
    let mut cell = 0u64;
    let mut selected = Vec::with_capacity(cfg.iterations() as usize);
    for q in 1..=cfg.iterations() {
        let cells_at_level = m.pow(q) as f64;
        let w = match cfg.integration {
            IntegrationWindow::PulseDuration => pulse_window,
            IntegrationWindow::Observation => profile.window_samples(cfg.cell_width(q)),
        };
        let mut best: Option<(u32, f64)> = None;
        for branch in 1..=cfg.branches {
            let c = cell * m + (m - branch as u64);
            let from = cfg.observation * c as f64 / cells_at_level;
            let to = cfg.observation * (c + 1) as f64 / cells_at_level;
            let held = profile
                .max_over(profile.half_open(from, to), w)
                .map_or(f64::NEG_INFINITY, |(_, v)| v);
            // ascending branch order with >= hands ties to the larger index
            match best {
                Some((_, b)) if held < b => {}
                _ => best = Some((branch, held)),
            }
        }
        let (winner, _) = best.expect("at least two branches");
        cell = cell * m + (m - winner as u64);
        selected.push(winner);
    }
    Ok(ToaEstimate::from_selection(selected, cfg.branches, cfg.observation))
}

/// Detection threshold `gamma * sigma^2 * T_win` on the held CTMA output.
pub fn presence_threshold(noise_variance: f64, window: f64, gamma: f64) -> f64 {
    gamma * noise_variance * window
}

// ---------------------------------------------------------------------------
// LPF approximation and the sampling baseline
// ---------------------------------------------------------------------------

/// Squared input filtered by `h(t) = beta^2 t exp(-beta t)`,
/// `beta = 1.4615 / T_p`.
///
/// The discrete convolution `step * sum_k h(k step) v^2[n - k]` is evaluated
/// by its exact second-order recursion.
pub fn lpf_approximation(v: &SignalTrace, pulse_duration: f64) -> Result<SignalTrace> {
    if !(pulse_duration > 0.0) || !pulse_duration.is_finite() {
        return Err(Error::Domain(format!("pulse duration must be positive, got {pulse_duration}")));
    }
    let step = v.step();
    let beta = LPF_BETA_SCALE / pulse_duration;
    let r = (-beta * step).exp();
    let gain = beta * beta * step * step * r;
    let (a1, a2) = (2.0 * r, -r * r);
    let mut out = Vec::with_capacity(v.len());
    let (mut y1, mut y2, mut u1) = (0.0, 0.0, 0.0);
    for s in v.samples() {
        let y = a1 * y1 + a2 * y2 + gain * u1;
        out.push(y);
        y2 = y1;
        y1 = y;
        u1 = s * s;
    }
    SignalTrace::new(v.start_time(), step, out, Units::VoltSquaredSeconds)
}

/// Nyquist-style baseline: the LPF output sampled at `f_s` from `t = 0`,
/// returning the time of the largest sample.
pub fn sampling_toa(v: &SignalTrace, pulse_duration: f64, sample_rate: f64) -> Result<f64> {
    sampling_toa_from_lpf(&lpf_approximation(v, pulse_duration)?, sample_rate)
}

/// [`sampling_toa`] on an already filtered trace.
pub fn sampling_toa_from_lpf(lpf: &SignalTrace, sample_rate: f64) -> Result<f64> {
    if !(sample_rate > 0.0) {
        return Err(Error::Domain("sampling rate must be positive".into()));
    }
    if sample_rate > lpf.sample_rate() * (1.0 + 1e-9) {
        return Err(Error::Domain(format!(
            "sampling rate {sample_rate:.4e} Hz exceeds the simulation grid rate {:.4e} Hz",
            lpf.sample_rate()
        )));
    }
    let first = snap_ceil(lpf.start_time().max(0.0) * sample_rate).max(0);
    let last = snap_floor(lpf.end_time() * sample_rate);
    let mut best: Option<(f64, f64)> = None;
    for n in first..=last {
        let t = n as f64 / sample_rate;
        let Some(value) = lpf.value_at(t) else { continue };
        match best {
            Some((_, b)) if value <= b => {}
            _ => best = Some((t, value)),
        }
    }
    best.map(|(t, _)| t)
        .ok_or_else(|| Error::Domain("no sampling instants fall inside the trace".into()))
}

/// Pulse start implied by a held-energy estimate, `tau - T_p`.
pub fn pulse_start_from_toa(tau: f64, pulse_duration: f64) -> Result<f64> {
    if tau < pulse_duration {
        return Err(Error::Domain(format!(
            "estimate {tau:.6e} s precedes the pulse duration {pulse_duration:.6e} s"
        )));
    }
    Ok(tau - pulse_duration)
}
