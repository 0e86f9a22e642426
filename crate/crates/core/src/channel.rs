//! Molecular absorption channel: spreading and absorption loss, absorption
//! noise power, and synthesis of the received noisy pulse.
//!
//! The channel transfer function at range `R` is
//!
//! ```text
//! H(f, R) = c / (4 pi R f_c) * exp(-j 2 pi f R / c) * exp(-k(f) R / 2)
//! ```
//!
//! with a frequency-flat spreading amplitude evaluated at the pulse center
//! frequency. The absorption coefficient `k(f)` comes from a tabulated file
//! and is linearly interpolated between rows.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::PowerSpectrum;
use crate::trace::{SignalTrace, Units};
use crate::{BOLTZMANN, SPEED_OF_LIGHT};

/// Frequency spacing of the pulse PSD used for the self-induced noise term.
const PSD_RESOLUTION_HZ: f64 = 1e8;

/// Uniform quadrature nodes across the receiver band, on top of the table
/// and PSD breakpoints.
const BAND_QUADRATURE_NODES: usize = 4001;

// ---------------------------------------------------------------------------
// Absorption table
// ---------------------------------------------------------------------------

/// Medium absorption coefficient `k(f)` in 1/m, tabulated on strictly
/// increasing frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionTable {
    frequencies: Vec<f64>,
    coefficients: Vec<f64>,
}

impl AbsorptionTable {
    /// Validates rows of `(frequency_hz, k_per_m)`. Errors carry the
    /// zero-based row index.
    pub fn from_rows(rows: &[(f64, f64)]) -> Result<Self> {
        Self::checked(rows).map_err(|(row, message)| {
            Error::Domain(format!("absorption row {row}: {message}"))
        })
    }

    fn checked(rows: &[(f64, f64)]) -> std::result::Result<Self, (usize, String)> {
        if rows.len() < 2 {
            return Err((rows.len(), "need at least two rows".into()));
        }
        for (i, &(f, k)) in rows.iter().enumerate() {
            if !f.is_finite() || f < 0.0 {
                return Err((i, format!("invalid frequency {f}")));
            }
            if !k.is_finite() || k < 0.0 {
                return Err((i, format!("absorption coefficient must be >= 0, got {k}")));
            }
            if i > 0 && f <= rows[i - 1].0 {
                return Err((i, format!("frequency {f} is not above the previous row")));
            }
        }
        Ok(Self {
            frequencies: rows.iter().map(|r| r.0).collect(),
            coefficients: rows.iter().map(|r| r.1).collect(),
        })
    }

    /// Frequency-independent absorption over `[f_lo, f_hi]`.
    pub fn constant(k: f64, f_lo: f64, f_hi: f64) -> Result<Self> {
        Self::from_rows(&[(f_lo, k), (f_hi, k)])
    }

    pub fn span(&self) -> (f64, f64) {
        (self.frequencies[0], *self.frequencies.last().unwrap())
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn covers(&self, band: (f64, f64)) -> bool {
        let (lo, hi) = self.span();
        band.0 >= lo && band.1 <= hi
    }

    fn require_band(&self, band: (f64, f64)) -> Result<()> {
        if self.covers(band) {
            Ok(())
        } else {
            let (lo, hi) = self.span();
            Err(Error::Config(format!(
                "absorption table spans [{lo:.4e}, {hi:.4e}] Hz but the band is [{:.4e}, {:.4e}] Hz",
                band.0, band.1
            )))
        }
    }

    /// Interpolated `k(f)`; `None` outside the table.
    pub fn k_at(&self, f: f64) -> Option<f64> {
        let (lo, hi) = self.span();
        if !(lo..=hi).contains(&f) {
            return None;
        }
        Some(self.interpolate(f))
    }

    /// `k(f)` held at the edge value outside the table.
    pub fn k_clamped(&self, f: f64) -> f64 {
        let (lo, hi) = self.span();
        self.interpolate(f.clamp(lo, hi))
    }

    fn interpolate(&self, f: f64) -> f64 {
        let i = self.frequencies.partition_point(|&x| x <= f);
        if i == 0 {
            return self.coefficients[0];
        }
        if i >= self.frequencies.len() {
            return *self.coefficients.last().unwrap();
        }
        let (f0, f1) = (self.frequencies[i - 1], self.frequencies[i]);
        let (k0, k1) = (self.coefficients[i - 1], self.coefficients[i]);
        k0 + (k1 - k0) * (f - f0) / (f1 - f0)
    }
}

/// Loads an absorption file.
///
/// Two layouts are accepted, selected by the header:
///
/// - `frequency_hz,k_per_m`: the total coefficient per row.
/// - `frequency_hz,species,K_per_m`: per-species coefficients, combined as
///   `k(f) = sum_j a_j K_j(f)` with mole fractions `a_j` from
///   `mole_fractions`. Every species must span the same frequency range.
pub fn ingest_absorption(
    path: &Path,
    mole_fractions: Option<&BTreeMap<String, f64>>,
) -> Result<AbsorptionTable> {
    let load_err = |row: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| load_err(0, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| load_err(1, e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();

    let parse = |s: &str, row: usize, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| load_err(row, format!("cannot parse {what} '{s}'")))
    };

    match header.as_slice() {
        ["frequency_hz", "k_per_m"] => {
            let mut rows = Vec::new();
            for (i, record) in reader.records().enumerate() {
                let line = i + 2;
                let record = record.map_err(|e| load_err(line, e.to_string()))?;
                rows.push((
                    parse(&record[0], line, "frequency")?,
                    parse(&record[1], line, "k")?,
                ));
            }
            AbsorptionTable::checked(&rows).map_err(|(row, msg)| load_err(row + 2, msg))
        }
        ["frequency_hz", "species", "k_per_m"] => {
            let fractions = mole_fractions.ok_or_else(|| {
                load_err(1, "multi-species file needs mole fractions in the run config".into())
            })?;
            let mut per_species: SpeciesRows = BTreeMap::new();
            for (i, record) in reader.records().enumerate() {
                let line = i + 2;
                let record = record.map_err(|e| load_err(line, e.to_string()))?;
                let entry = per_species.entry(record[1].to_string()).or_default();
                entry.0.push((
                    parse(&record[0], line, "frequency")?,
                    parse(&record[2], line, "K")?,
                ));
                entry.1.push(line);
            }
            aggregate_species(per_species, fractions).map_err(|(row, msg)| load_err(row, msg))
        }
        other => Err(load_err(
            1,
            format!(
                "unrecognized header {other:?}; expected frequency_hz,k_per_m or frequency_hz,species,K_per_m"
            ),
        )),
    }
}

/// Per species: `(frequency, K)` rows and their file line numbers.
type SpeciesRows = BTreeMap<String, (Vec<(f64, f64)>, Vec<usize>)>;

fn aggregate_species(
    per_species: SpeciesRows,
    fractions: &BTreeMap<String, f64>,
) -> std::result::Result<AbsorptionTable, (usize, String)> {
    if per_species.is_empty() {
        return Err((2, "no data rows".into()));
    }
    for name in fractions.keys() {
        if !per_species.contains_key(name) {
            return Err((1, format!("mole fraction given for species '{name}' absent from file")));
        }
    }
    let mut tables = Vec::new();
    for (name, (rows, lines)) in &per_species {
        let fraction = *fractions.get(name).ok_or_else(|| {
            (lines[0], format!("no mole fraction configured for species '{name}'"))
        })?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err((lines[0], format!("mole fraction of '{name}' must lie in [0, 1]")));
        }
        let table = AbsorptionTable::checked(rows).map_err(|(i, msg)| {
            (lines.get(i).copied().unwrap_or(lines[0]), format!("species '{name}': {msg}"))
        })?;
        tables.push((fraction, table, lines[0]));
    }
    let span = tables[0].1.span();
    for (_, table, line) in &tables {
        if table.span() != span {
            return Err((*line, "all species must cover the same frequency range".into()));
        }
    }
    let mut grid: Vec<f64> = tables
        .iter()
        .flat_map(|(_, t, _)| t.frequencies.iter().copied())
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let rows: Vec<(f64, f64)> = grid
        .iter()
        .map(|&f| (f, tables.iter().map(|(a, t, _)| a * t.interpolate(f)).sum()))
        .collect();
    AbsorptionTable::checked(&rows)
}

// ---------------------------------------------------------------------------
// Channel response and noise
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub range_m: f64,
    pub center_frequency_hz: f64,
    /// Receiver band `B`, `(low, high)` in Hz.
    pub band_hz: (f64, f64),
    pub temperature_k: f64,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_m > 0.0) || !self.range_m.is_finite() {
            return Err(Error::Domain(format!("range must be positive, got {}", self.range_m)));
        }
        if !(self.center_frequency_hz > 0.0) {
            return Err(Error::Domain("center frequency must be positive".into()));
        }
        let (lo, hi) = self.band_hz;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Domain(format!("band ({lo}, {hi}) must be positive and ordered")));
        }
        if !(self.temperature_k > 0.0) {
            return Err(Error::Domain("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn with_range(self, range_m: f64) -> Self {
        Self { range_m, ..self }
    }

    /// Frequency-flat spreading amplitude `c / (4 pi R f_c)`.
    pub fn spreading_gain(&self) -> f64 {
        SPEED_OF_LIGHT / (4.0 * PI * self.range_m * self.center_frequency_hz)
    }

    pub fn delay(&self) -> f64 {
        self.range_m / SPEED_OF_LIGHT
    }
}

fn response_at(spec: &ChannelSpec, k: f64, f: f64) -> Complex64 {
    let magnitude = spec.spreading_gain() * (-0.5 * k * spec.range_m).exp();
    Complex64::from_polar(magnitude, -2.0 * PI * f * spec.delay())
}

/// `H(f, R)` at each frequency, all of which must lie inside the table.
pub fn channel_response(
    spec: &ChannelSpec,
    table: &AbsorptionTable,
    frequencies: &[f64],
) -> Result<Vec<Complex64>> {
    spec.validate()?;
    frequencies
        .iter()
        .map(|&f| {
            let k = table.k_at(f).ok_or_else(|| {
                let (lo, hi) = table.span();
                Error::Domain(format!("frequency {f:.4e} Hz outside absorption table [{lo:.4e}, {hi:.4e}]"))
            })?;
            Ok(response_at(spec, k, f))
        })
        .collect()
}

/// One-sided power spectral density of the transmitted pulse, scaled so that
/// its integral over the receiver band equals the pulse power.
#[derive(Debug, Clone, PartialEq)]
pub struct PulsePsd {
    frequencies: Vec<f64>,
    density: Vec<f64>,
}

impl PulsePsd {
    pub fn from_trace(pulse: &SignalTrace, band: (f64, f64), power_w: f64) -> Self {
        let spectrum = PowerSpectrum::of(pulse, PSD_RESOLUTION_HZ);
        let df = spectrum.resolution();
        let first = ((band.0 / df).floor() as usize).saturating_sub(1);
        let last = ((band.1 / df).ceil() as usize + 1).min(spectrum.power().len() - 1);
        let frequencies: Vec<f64> = (first..=last).map(|b| spectrum.frequency(b)).collect();
        let raw: Vec<f64> = (first..=last).map(|b| spectrum.energy_density(b)).collect();
        let mut psd = Self {
            frequencies,
            density: raw,
        };
        let total = trapezoid(&band_nodes(band, &[&psd.frequencies]), |f| psd.at(f));
        let scale = if total > 0.0 { power_w / total } else { 0.0 };
        psd.density.iter_mut().for_each(|d| *d *= scale);
        psd
    }

    /// Flat density `level` W/Hz across `band`.
    pub fn flat(level: f64, band: (f64, f64)) -> Self {
        Self {
            frequencies: vec![band.0, band.1],
            density: vec![level, level],
        }
    }

    /// Linear interpolation, zero outside the tabulated range.
    pub fn at(&self, f: f64) -> f64 {
        let i = self.frequencies.partition_point(|&x| x <= f);
        if i == 0 || (i == self.frequencies.len() && f > *self.frequencies.last().unwrap()) {
            return 0.0;
        }
        if i == self.frequencies.len() {
            return *self.density.last().unwrap();
        }
        let (f0, f1) = (self.frequencies[i - 1], self.frequencies[i]);
        let (d0, d1) = (self.density[i - 1], self.density[i]);
        d0 + (d1 - d0) * (f - f0) / (f1 - f0)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.frequencies
    }
}

/// Absorption noise p.s.d. `S_N = S_NB + S_NG` at one frequency.
///
/// The background term uses the infinite-range emissivity, which is 1 for
/// any absorbing frequency and 0 where `k(f) = 0`.
pub fn noise_psd(spec: &ChannelSpec, k: f64, pulse_density: f64) -> f64 {
    let c = SPEED_OF_LIGHT;
    let fc = spec.center_frequency_hz;
    let aperture = (c / ((4.0 * PI).sqrt() * fc)).powi(2);
    let background_emissivity = if k > 0.0 { 1.0 } else { 0.0 };
    let background = BOLTZMANN * spec.temperature_k * background_emissivity * aperture;
    let emissivity = -(-k * spec.range_m).exp_m1();
    let self_induced = pulse_density * emissivity * spec.spreading_gain().powi(2);
    background + self_induced
}

/// Total absorption noise power `sigma^2(R) = int_B S_N(f, R) df`.
pub fn noise_variance(spec: &ChannelSpec, table: &AbsorptionTable, psd: &PulsePsd) -> Result<f64> {
    spec.validate()?;
    table.require_band(spec.band_hz)?;
    let nodes = band_nodes(spec.band_hz, &[table.frequencies(), psd.breakpoints()]);
    Ok(trapezoid(&nodes, |f| noise_psd(spec, table.interpolate(f), psd.at(f))))
}

fn band_nodes(band: (f64, f64), breakpoints: &[&[f64]]) -> Vec<f64> {
    let (lo, hi) = band;
    let n = BAND_QUADRATURE_NODES;
    let mut nodes: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    for set in breakpoints {
        nodes.extend(set.iter().copied().filter(|f| *f > lo && *f < hi));
    }
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    nodes
}

fn trapezoid(nodes: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let values: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    nodes
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

/// Closed time interval covered by a received trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Band-limited Gaussian noise of power `sigma^2(R)`.
    Model,
    Off,
}

/// Reusable propagation set-up for one transmitted pulse.
///
/// The pulse spectrum, FFT plans and per-bin absorption are computed once;
/// [`Propagator::propagate`] then costs one inverse FFT per call and can be
/// shared between threads.
pub struct Propagator {
    spec: ChannelSpec,
    table: AbsorptionTable,
    psd: PulsePsd,
    step: f64,
    window: TimeWindow,
    trace_len: usize,
    fft_len: usize,
    inverse: Arc<dyn ComplexToReal<f64>>,
    pulse_spectrum: Vec<Complex64>,
    bin_absorption: Vec<f64>,
    band_bins: (usize, usize),
    /// Observation-axis time of the first pulse sample, before the channel delay.
    pulse_origin: f64,
    pulse_span: f64,
    emit_time: f64,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("spec", &self.spec)
            .field("window", &self.window)
            .field("trace_len", &self.trace_len)
            .field("fft_len", &self.fft_len)
            .finish_non_exhaustive()
    }
}

impl Propagator {
    /// `pulse` is placed on the observation axis translated by `emit_time`,
    /// so its sample at pulse time `t` leaves the transmitter at
    /// `emit_time + t`. The range in `spec` is ignored; it is supplied per
    /// call to [`Propagator::propagate`].
    pub fn new(
        pulse: &SignalTrace,
        emit_time: f64,
        spec: ChannelSpec,
        table: &AbsorptionTable,
        window: TimeWindow,
        pulse_power_w: f64,
    ) -> Result<Self> {
        spec.with_range(1.0).validate()?;
        table.require_band(spec.band_hz)?;
        if !(window.end > window.start) {
            return Err(Error::Config("observation window end must follow its start".into()));
        }
        let step = pulse.step();
        let trace_len = crate::trace::snap_floor((window.end - window.start) / step) as usize + 1;
        let fft_len = (trace_len + pulse.len()).next_power_of_two();

        let mut planner = RealFftPlanner::<f64>::new();
        let forward: Arc<dyn RealToComplex<f64>> = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let mut input = forward.make_input_vec();
        input[..pulse.len()].copy_from_slice(pulse.samples());
        let mut pulse_spectrum = forward.make_output_vec();
        forward
            .process(&mut input, &mut pulse_spectrum)
            .expect("buffers come from the plan");

        let df = 1.0 / (fft_len as f64 * step);
        let bin_absorption = (0..pulse_spectrum.len())
            .map(|b| table.k_clamped(b as f64 * df))
            .collect();
        let lo_bin = ((spec.band_hz.0 / df).ceil() as usize).max(1);
        let hi_bin = ((spec.band_hz.1 / df).floor() as usize).min(fft_len / 2 - 1);

        Ok(Self {
            spec,
            table: table.clone(),
            psd: PulsePsd::from_trace(pulse, spec.band_hz, pulse_power_w),
            step,
            window,
            trace_len,
            fft_len,
            inverse,
            pulse_spectrum,
            bin_absorption,
            band_bins: (lo_bin, hi_bin),
            pulse_origin: emit_time + pulse.start_time() - window.start,
            pulse_span: pulse.end_time(),
            emit_time,
        })
    }

    pub fn channel(&self, range_m: f64) -> ChannelSpec {
        self.spec.with_range(range_m)
    }

    pub fn pulse_psd(&self) -> &PulsePsd {
        &self.psd
    }

    pub fn noise_variance(&self, range_m: f64) -> Result<f64> {
        noise_variance(&self.channel(range_m), &self.table, &self.psd)
    }

    /// Received signal `g_p * h + n` at `range_m` on the observation grid.
    pub fn propagate(&self, range_m: f64, noise: NoiseMode, seed: u64) -> Result<SignalTrace> {
        let spec = self.channel(range_m);
        spec.validate()?;
        let latest = self.emit_time + spec.delay() + self.pulse_span;
        if latest > self.window.end {
            return Err(Error::WindowOverflow {
                required: latest - self.window.start,
                available: self.window.end - self.window.start,
            });
        }

        let df = 1.0 / (self.fft_len as f64 * self.step);
        let shift = self.pulse_origin;
        let mut spectrum: Vec<Complex64> = self
            .pulse_spectrum
            .iter()
            .zip(&self.bin_absorption)
            .enumerate()
            .map(|(b, (&g, &k))| {
                let f = b as f64 * df;
                g * response_at(&spec, k, f) * Complex64::from_polar(1.0, -2.0 * PI * f * shift)
            })
            .collect();

        if noise == NoiseMode::Model {
            let variance = self.noise_variance(range_m)?;
            if variance > 0.0 {
                let (lo, hi) = self.band_bins;
                let bins = (hi + 1 - lo) as f64;
                let n = self.fft_len as f64;
                // time-domain variance of the unnormalized inverse is 2 * bins * E|X|^2 / n^2
                let per_component = (variance * n * n / (4.0 * bins)).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for bin in &mut spectrum[lo..=hi] {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *bin += Complex64::new(re, im) * per_component;
                }
            }
        }

        spectrum[0].im = 0.0;
        let last = spectrum.len() - 1;
        spectrum[last].im = 0.0;
        let mut output = self.inverse.make_output_vec();
        self.inverse
            .process(&mut spectrum, &mut output)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let scale = 1.0 / self.fft_len as f64;
        output.truncate(self.trace_len);
        output.iter_mut().for_each(|v| *v *= scale);
        SignalTrace::new(self.window.start, self.step, output, Units::Volts)
    }
}

/// One-shot convenience around [`Propagator`].
#[allow(clippy::too_many_arguments)]
pub fn propagate(
    pulse: &SignalTrace,
    pulse_power_w: f64,
    spec: &ChannelSpec,
    table: &AbsorptionTable,
    seed: u64,
    emit_time: f64,
    window: TimeWindow,
    noise: NoiseMode,
) -> Result<SignalTrace> {
    Propagator::new(pulse, emit_time, *spec, table, window, pulse_power_w)?
        .propagate(spec.range_m, noise, seed)
}
