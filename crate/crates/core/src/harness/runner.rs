//! Seeded Monte Carlo runner.
//!
//! Every trial draws its noise from a seed derived from
//! `(root, position, run, base station)`, so results do not depend on how
//! trials are scheduled across threads.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ToaMode};
use crate::channel::{ChannelSpec, NoiseMode, Propagator, TimeWindow};
use crate::detector::{
    iterative_toa_profile, lpf_approximation, presence_threshold, sampling_toa_from_lpf,
    DetectorBankConfig, EnergyProfile,
};
use crate::error::{Error, Result};
use crate::locate::{localize, BsLayout, Position, ToaTriplet};
use crate::parallel::{self, Execution};
use crate::pulse::Pulse;
use crate::trace::SignalTrace;
use crate::SPEED_OF_LIGHT;

/// Clearance kept between random nodes and every base station.
pub const BS_GUARD_M: f64 = 0.01;

/// Range at which the calibrated TOA offsets are measured.
const CALIBRATION_RANGE_M: f64 = 1.0;

const POSITION_STREAM: u64 = 0x706f_7369_7469_6f6e;
const TOA_STREAM: u64 = 0x746f_615f_6e6f_6465;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d1_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of the root seed and a path of indices.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// Noise seed of one received trace.
pub fn trial_seed(root: u64, position: usize, run: usize, bs: usize) -> u64 {
    derive_seed(root, &[position as u64, run as u64, bs as u64])
}

/// Nodes drawn uniformly over the open `side x side` square, rejecting any
/// within [`BS_GUARD_M`] of a base station.
pub fn draw_positions(root: u64, n: usize, layout: &BsLayout, side: f64) -> Vec<Position> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, &[POSITION_STREAM]));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Position::new(rng.random::<f64>() * side, rng.random::<f64>() * side);
        if p.x > 0.0 && p.y > 0.0 && layout.stations().iter().all(|s| s.distance(&p) > BS_GUARD_M) {
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorTag {
    Ctma { branches: u32, stages: u32 },
    Sampling { rate_hz: f64 },
}

impl EstimatorTag {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Ctma { .. } => "ctma",
            Self::Sampling { .. } => "sampling",
        }
    }

    /// `M^(Q+1)` for detector banks.
    pub fn alpha(&self) -> Option<u64> {
        match *self {
            Self::Ctma { branches, stages } => Some((branches as u64).pow(stages + 1)),
            Self::Sampling { .. } => None,
        }
    }

    pub fn rate_hz(&self) -> Option<f64> {
        match *self {
            Self::Sampling { rate_hz } => Some(rate_hz),
            Self::Ctma { .. } => None,
        }
    }
}

impl std::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Self::Ctma { branches, stages } => write!(f, "ctma(M={branches},Q={stages})"),
            Self::Sampling { rate_hz } => write!(f, "sampling@{}GHz", rate_hz / 1e9),
        }
    }
}

/// One localization attempt by one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub position: usize,
    pub run: usize,
    pub truth: Position,
    pub estimate: Position,
    /// Raw arrival-time estimates at BS 1..3.
    pub toas: [f64; 3],
    /// Offset removed from the BS 1 estimate to obtain `R_1`.
    pub offset: f64,
    pub error_m: f64,
    pub estimator: EstimatorTag,
    /// Set when a presence threshold is configured and some BS fell below it.
    pub flagged: bool,
}

/// Arrival-time estimate at a single base station.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToaRecord {
    pub run: usize,
    pub estimator: String,
    pub alpha: Option<u64>,
    pub rate_hz: Option<f64>,
    pub true_toa_s: f64,
    pub tau_hat_s: f64,
    pub tau_minus_tp_s: f64,
    pub corrected_s: f64,
    pub error_s: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Sorted by position, run, then estimator order.
    pub trials: Vec<TrialResult>,
    pub estimators: Vec<EstimatorTag>,
    /// Summed per-estimator processing time across all trials.
    pub estimator_time: Vec<Duration>,
    pub wall_time: Duration,
    pub pulse_duration: f64,
}

/// Everything a run needs, prepared and validated before any trial starts.
#[derive(Debug)]
pub struct Experiment {
    cfg: ExperimentConfig,
    pulse: Pulse,
    propagator: Propagator,
    layout: BsLayout,
    positions: Vec<Position>,
    banks: Vec<DetectorBankConfig>,
    estimators: Vec<EstimatorTag>,
    offsets: Vec<f64>,
    emit_time: f64,
}

impl Experiment {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate_static()?;
        let table = cfg.load_absorption()?;
        let pulse = Pulse::synthesize(cfg.pulse, cfg.grid_step_s)?;
        let t_p = pulse.duration;
        let step = cfg.grid_step_s;

        let banks = if cfg.estimator.ctma() { cfg.bank_configs(t_p)? } else { Vec::new() };
        let rates: &[f64] = if cfg.estimator.sampling() { &cfg.sampling_rates_hz } else { &[] };

        // the pulse's effective start leaves the node at t = 0
        let emit_time = t_p / 2.0;
        let lead = (2.0 * t_p / step).ceil() * step;
        let window = TimeWindow { start: -lead, end: cfg.observation_s };
        let latest = emit_time + cfg.max_range() / SPEED_OF_LIGHT + pulse.trace.end_time();
        if latest > window.end {
            return Err(Error::WindowOverflow {
                required: latest - window.start,
                available: window.end - window.start,
            });
        }

        let spec = ChannelSpec {
            range_m: CALIBRATION_RANGE_M,
            center_frequency_hz: cfg.pulse.center_frequency_hz,
            band_hz: cfg.band_hz,
            temperature_k: cfg.temperature_k,
        };
        let propagator = Propagator::new(&pulse.trace, emit_time, spec, &table, window, cfg.pulse.power_w)?;
        let layout = BsLayout::square(cfg.layout_side_m)?;
        let positions = draw_positions(cfg.seed, cfg.n_pos, &layout, cfg.layout_side_m);

        let mut estimators: Vec<EstimatorTag> = banks
            .iter()
            .map(|b| EstimatorTag::Ctma { branches: b.branches, stages: b.stages })
            .collect();
        estimators.extend(rates.iter().map(|&rate_hz| EstimatorTag::Sampling { rate_hz }));

        let offsets = calibrate(cfg.toa_mode, &propagator, t_p, &banks, &estimators)?;
        Ok(Self {
            cfg: cfg.clone(),
            pulse,
            propagator,
            layout,
            positions,
            banks,
            estimators,
            offsets,
            emit_time,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn pulse(&self) -> &Pulse {
        &self.pulse
    }

    pub fn layout(&self) -> &BsLayout {
        &self.layout
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn estimators(&self) -> &[EstimatorTag] {
        &self.estimators
    }

    /// Offset subtracted from the BS 1 estimate, per estimator.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn emit_time(&self) -> f64 {
        self.emit_time
    }

    fn noise(&self) -> NoiseMode {
        if self.cfg.noise { NoiseMode::Model } else { NoiseMode::Off }
    }

    /// Received traces at the three base stations for one trial.
    pub fn received_traces(&self, position: usize, run: usize) -> Result<[SignalTrace; 3]> {
        let node = self.positions.get(position).ok_or_else(|| {
            Error::Config(format!("position index {position} out of range"))
        })?;
        let ranges = self.layout.ranges_to(node);
        let traces = (0..3)
            .map(|bs| self.propagator.propagate(ranges[bs], self.noise(), trial_seed(self.cfg.seed, position, run, bs)))
            .collect::<Result<Vec<_>>>()?;
        Ok(traces.try_into().expect("three traces"))
    }

    /// Arrival-time estimates for one received trace, in estimator order,
    /// plus the time spent per estimator.
    fn estimate_toas(&self, trace: &SignalTrace) -> Result<Vec<(f64, Duration)>> {
        let mut out = Vec::with_capacity(self.estimators.len());
        if !self.banks.is_empty() {
            let start = Instant::now();
            let profile = EnergyProfile::new(trace);
            let shared = start.elapsed();
            for bank in &self.banks {
                let start = Instant::now();
                let tau = iterative_toa_profile(&profile, bank)?.tau;
                out.push((tau, shared + start.elapsed()));
            }
        }
        let rates: Vec<f64> = self.estimators.iter().filter_map(EstimatorTag::rate_hz).collect();
        if !rates.is_empty() {
            let start = Instant::now();
            let lpf = lpf_approximation(trace, self.pulse.duration)?;
            let shared = start.elapsed();
            for rate in rates {
                let start = Instant::now();
                let tau = sampling_toa_from_lpf(&lpf, rate)?;
                out.push((tau, shared + start.elapsed()));
            }
        }
        Ok(out)
    }

    fn below_threshold(&self, trace: &SignalTrace, range: f64, gamma: f64) -> Result<bool> {
        let profile = EnergyProfile::new(trace);
        let w = profile.window_samples(self.pulse.duration);
        let peak = profile
            .max_over(profile.half_open(0.0, self.cfg.observation_s), w)
            .map_or(0.0, |(_, v)| v);
        let sigma2 = self.propagator.noise_variance(range)?;
        Ok(peak < presence_threshold(sigma2, self.pulse.duration, gamma))
    }

    /// All estimators on one `(position, run)` cell.
    pub fn run_trial(&self, position: usize, run: usize) -> Result<(Vec<TrialResult>, Vec<Duration>)> {
        let truth = self.positions[position];
        let ranges = self.layout.ranges_to(&truth);
        let traces = self.received_traces(position, run)?;

        let mut flagged = false;
        if let Some(gamma) = self.cfg.threshold_gamma {
            for (trace, &range) in traces.iter().zip(&ranges) {
                flagged |= self.below_threshold(trace, range, gamma)?;
            }
        }

        let per_bs = traces
            .iter()
            .map(|t| self.estimate_toas(t))
            .collect::<Result<Vec<_>>>()?;
        let mut results = Vec::with_capacity(self.estimators.len());
        let mut times = Vec::with_capacity(self.estimators.len());
        for (e, &estimator) in self.estimators.iter().enumerate() {
            let toas = [per_bs[0][e].0, per_bs[1][e].0, per_bs[2][e].0];
            let offset = self.offsets[e];
            let triplet = ToaTriplet::new(toas, offset)?;
            let estimate = localize(&self.layout, &triplet, self.cfg.r1_mode, self.cfg.layout_side_m)?;
            results.push(TrialResult {
                position,
                run,
                truth,
                estimate,
                toas,
                offset,
                error_m: ((estimate.x - truth.x).powi(2) + (estimate.y - truth.y).powi(2)).sqrt(),
                estimator,
                flagged,
            });
            times.push(per_bs.iter().map(|b| b[e].1).sum());
        }
        Ok((results, times))
    }

    pub fn run(&self, exec: Execution) -> Result<ExperimentOutput> {
        let start = Instant::now();
        let cells: Vec<(usize, usize)> = (0..self.cfg.n_pos)
            .flat_map(|p| (0..self.cfg.n_run).map(move |r| (p, r)))
            .collect();
        let outcomes = parallel::map(&cells, exec, |&(p, r)| self.run_trial(p, r));

        let mut trials = Vec::with_capacity(cells.len() * self.estimators.len());
        let mut estimator_time = vec![Duration::ZERO; self.estimators.len()];
        for outcome in outcomes {
            let (results, times) = outcome?;
            trials.extend(results);
            for (acc, t) in estimator_time.iter_mut().zip(times) {
                *acc += t;
            }
        }
        Ok(ExperimentOutput {
            trials,
            estimators: self.estimators.clone(),
            estimator_time,
            wall_time: start.elapsed(),
            pulse_duration: self.pulse.duration,
        })
    }

    /// Single-node arrival-time experiment at BS 1 for the configured
    /// `toa_node`, one record per run and estimator.
    pub fn toa_experiment(&self, exec: Execution) -> Result<Vec<ToaRecord>> {
        let (x, y) = self.cfg.toa_node;
        let range = self.layout.stations()[0].distance(&Position::new(x, y));
        let true_toa = range / SPEED_OF_LIGHT;
        let runs: Vec<usize> = (0..self.cfg.n_run).collect();
        let outcomes = parallel::map(&runs, exec, |&run| -> Result<Vec<ToaRecord>> {
            let seed = derive_seed(self.cfg.seed, &[TOA_STREAM, run as u64]);
            let trace = self.propagator.propagate(range, self.noise(), seed)?;
            let taus = self.estimate_toas(&trace)?;
            Ok(self
                .estimators
                .iter()
                .zip(&self.offsets)
                .zip(taus)
                .map(|((tag, &offset), (tau, _))| ToaRecord {
                    run,
                    estimator: tag.to_string(),
                    alpha: tag.alpha(),
                    rate_hz: tag.rate_hz(),
                    true_toa_s: true_toa,
                    tau_hat_s: tau,
                    tau_minus_tp_s: tau - self.pulse.duration,
                    corrected_s: tau - offset,
                    error_s: tau - offset - true_toa,
                })
                .collect())
        });
        let mut records = Vec::new();
        for o in outcomes {
            records.extend(o?);
        }
        Ok(records)
    }
}

/// Per-estimator offset between the raw estimate and the true travel time.
fn calibrate(
    mode: ToaMode,
    propagator: &Propagator,
    pulse_duration: f64,
    banks: &[DetectorBankConfig],
    estimators: &[EstimatorTag],
) -> Result<Vec<f64>> {
    match mode {
        ToaMode::Peak => Ok(vec![0.0; estimators.len()]),
        ToaMode::StartCorrected => Ok(vec![pulse_duration; estimators.len()]),
        ToaMode::Calibrated => {
            let clean = propagator.propagate(CALIBRATION_RANGE_M, NoiseMode::Off, 0)?;
            let travel = CALIBRATION_RANGE_M / SPEED_OF_LIGHT;
            let mut offsets = Vec::with_capacity(estimators.len());
            if !banks.is_empty() {
                let profile = EnergyProfile::new(&clean);
                let w = profile.window_samples(pulse_duration);
                let (k, _) = profile
                    .max_over(0..profile.len(), w)
                    .ok_or_else(|| Error::Numeric("empty calibration trace".into()))?;
                let peak = profile.time_at(k) - travel;
                // the bank reports the start of the cell holding the peak
                offsets.extend(banks.iter().map(|b| peak - b.resolution() / 2.0));
            }
            if estimators.iter().any(|e| e.rate_hz().is_some()) {
                let lpf = lpf_approximation(&clean, pulse_duration)?;
                let (k, _) = lpf.argmax();
                offsets.extend(
                    estimators.iter().filter(|e| e.rate_hz().is_some()).map(|_| lpf.time_at(k) - travel),
                );
            }
            Ok(offsets)
        }
    }
}

/// Prepares and runs a full experiment.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutput> {
    Experiment::prepare(cfg)?.run(exec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_across_cells() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..10 {
            for r in 0..50 {
                for bs in 0..3 {
                    assert!(seen.insert(trial_seed(7, p, r, bs)));
                }
            }
        }
        assert_ne!(trial_seed(1, 0, 0, 0), trial_seed(2, 0, 0, 0));
    }

    #[test]
    fn positions_respect_guard() {
        let layout = BsLayout::square(2.0).unwrap();
        let pts = draw_positions(3, 500, &layout, 2.0);
        assert_eq!(pts, draw_positions(3, 500, &layout, 2.0));
        for p in pts {
            assert!(p.x > 0.0 && p.x < 2.0 && p.y > 0.0 && p.y < 2.0);
            assert!(layout.stations().iter().all(|s| s.distance(&p) > BS_GUARD_M));
        }
    }

    #[test]
    fn tag_labels() {
        let c = EstimatorTag::Ctma { branches: 2, stages: 11 };
        assert_eq!(c.alpha(), Some(4096));
        assert_eq!(c.to_string(), "ctma(M=2,Q=11)");
        assert_eq!(EstimatorTag::Sampling { rate_hz: 600e9 }.to_string(), "sampling@600GHz");
    }
}
