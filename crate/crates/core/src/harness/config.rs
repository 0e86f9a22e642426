//! Experiment configuration, read from TOML.
//!
//! ```toml
//! layout_side_m = 2.0
//! observation_s = 10e-9
//! absorption_path = "../data/summer_air_h2o_1p86.csv"
//! banks = [[12, 2], [2, 11], [10, 3]]
//! sampling_rates_hz = [300e9, 600e9, 1000e9]
//! n_pos = 10
//! n_run = 50
//! seed = 1
//!
//! [pulse]
//! order = 2
//! center_frequency_hz = 200e9
//! power_w = 1e-6
//! ```
//!
//! Omitted keys take the defaults of [`ExperimentConfig::default`]. Relative
//! paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ingest_absorption, AbsorptionTable};
use crate::detector::{DetectorBankConfig, IntegrationWindow};
use crate::error::{Error, Result};
use crate::locate::R1Mode;
use crate::pulse::{PulseSpec, DEFAULT_GRID_STEP};
use crate::SPEED_OF_LIGHT;

/// How raw detector outputs become arrival times for localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToaMode {
    /// Raw held-energy peak time.
    Peak,
    /// Peak time minus the pulse duration.
    StartCorrected,
    /// Peak time minus each estimator's mean response to a clean pulse that
    /// starts at `t = 0`; for the detector bank this includes the mean
    /// half-cell lag of the cell-start estimate.
    #[default]
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorSelection {
    Ctma,
    Sampling,
    #[default]
    Both,
}

impl EstimatorSelection {
    pub fn ctma(self) -> bool {
        matches!(self, Self::Ctma | Self::Both)
    }

    pub fn sampling(self) -> bool {
        matches!(self, Self::Sampling | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub layout_side_m: f64,
    pub pulse: PulseSpec,
    pub grid_step_s: f64,
    pub band_hz: (f64, f64),
    pub temperature_k: f64,
    pub absorption_path: Option<PathBuf>,
    /// Mole fractions for multi-species absorption files.
    pub mole_fractions: Option<BTreeMap<String, f64>>,
    pub observation_s: f64,
    /// `(M, Q)` pairs of the detector bank sweep.
    pub banks: Vec<(u32, u32)>,
    pub sampling_rates_hz: Vec<f64>,
    pub n_pos: usize,
    pub n_run: usize,
    pub seed: u64,
    pub toa_mode: ToaMode,
    pub r1_mode: R1Mode,
    pub estimator: EstimatorSelection,
    pub noise: bool,
    pub ctma_integration: IntegrationWindow,
    /// Flags trials whose held energy stays below `gamma * sigma^2 * T_p`.
    pub threshold_gamma: Option<f64>,
    /// Node used by the single-node TOA experiment.
    pub toa_node: (f64, f64),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            layout_side_m: 2.0,
            pulse: PulseSpec::new(2, 200e9, 1e-6),
            grid_step_s: DEFAULT_GRID_STEP,
            band_hz: (100e9, 300e9),
            temperature_k: 296.0,
            absorption_path: None,
            mole_fractions: None,
            observation_s: 10e-9,
            banks: vec![(12, 2), (2, 11), (10, 3)],
            sampling_rates_hz: vec![300e9, 600e9, 1000e9],
            n_pos: 10,
            n_run: 500,
            seed: 1,
            toa_mode: ToaMode::default(),
            r1_mode: R1Mode::default(),
            estimator: EstimatorSelection::default(),
            noise: true,
            ctma_integration: IntegrationWindow::default(),
            threshold_gamma: None,
            toa_node: (0.5, 0.75),
        }
    }
}

impl ExperimentConfig {
    /// Paper set-up with the given absorption file.
    pub fn paper(absorption_path: impl Into<PathBuf>) -> Self {
        Self {
            absorption_path: Some(absorption_path.into()),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if let (Some(dir), Some(path)) = (base_dir, cfg.absorption_path.as_mut()) {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Longest node to BS distance inside the square layout.
    pub fn max_range(&self) -> f64 {
        self.layout_side_m * std::f64::consts::SQRT_2
    }

    pub fn load_absorption(&self) -> Result<AbsorptionTable> {
        let path = self
            .absorption_path
            .as_deref()
            .ok_or_else(|| Error::Config("absorption_path is required".into()))?;
        ingest_absorption(path, self.mole_fractions.as_ref())
    }

    /// Bank configurations for a pulse of duration `pulse_duration`.
    pub fn bank_configs(&self, pulse_duration: f64) -> Result<Vec<DetectorBankConfig>> {
        self.banks
            .iter()
            .map(|&(m, q)| {
                let cfg = DetectorBankConfig::new(m, q, self.observation_s, pulse_duration)?
                    .with_integration(self.ctma_integration);
                cfg.check_resolvable(self.grid_step_s)?;
                Ok(cfg)
            })
            .collect()
    }

    /// Checks that do not need the pulse or the absorption table.
    pub fn validate_static(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if !(self.layout_side_m > 0.0) {
            return cfg_err(format!("layout_side_m must be positive, got {}", self.layout_side_m));
        }
        self.pulse.validate()?;
        let max_step = 1.0 / (20.0 * self.pulse.center_frequency_hz);
        if !(self.grid_step_s > 0.0) || self.grid_step_s > max_step * (1.0 + 1e-12) {
            return cfg_err(format!(
                "grid_step_s must lie in (0, {max_step:.3e}], got {:.3e}",
                self.grid_step_s
            ));
        }
        let (lo, hi) = self.band_hz;
        if !(lo > 0.0 && hi > lo) {
            return cfg_err(format!("band_hz ({lo}, {hi}) must be positive and ordered"));
        }
        if !(self.temperature_k > 0.0) {
            return cfg_err("temperature_k must be positive".into());
        }
        let min_observation = self.max_range() / SPEED_OF_LIGHT;
        if !(self.observation_s > min_observation) {
            return cfg_err(format!(
                "observation_s {:.3e} s must exceed the layout diagonal travel time {min_observation:.3e} s",
                self.observation_s
            ));
        }
        if self.n_pos == 0 || self.n_run == 0 {
            return cfg_err("n_pos and n_run must both be at least 1".into());
        }
        if self.estimator.ctma() && self.banks.is_empty() {
            return cfg_err("the CTMA estimator needs at least one (M, Q) pair in banks".into());
        }
        if self.estimator.sampling() && self.sampling_rates_hz.is_empty() {
            return cfg_err("the sampling estimator needs at least one rate in sampling_rates_hz".into());
        }
        for &rate in &self.sampling_rates_hz {
            if !(rate > 0.0) || rate > (1.0 / self.grid_step_s) * (1.0 + 1e-9) {
                return cfg_err(format!(
                    "sampling rate {rate:.4e} Hz must be positive and at most the grid rate {:.4e} Hz",
                    1.0 / self.grid_step_s
                ));
            }
        }
        if let Some(gamma) = self.threshold_gamma {
            if !(gamma > 0.0) {
                return cfg_err("threshold_gamma must be positive".into());
            }
        }
        let (x, y) = self.toa_node;
        if !(0.0..=self.layout_side_m).contains(&x) || !(0.0..=self.layout_side_m).contains(&y) {
            return cfg_err(format!("toa_node ({x}, {y}) lies outside the layout"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_toml_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "n_run = 7\nbanks = [[3, 2]]\ntoa_mode = \"start-corrected\"\n[pulse]\norder = 10\ncenter_frequency_hz = 2e11\npower_w = 1e-6\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.n_run, 7);
        assert_eq!(cfg.banks, vec![(3, 2)]);
        assert_eq!(cfg.pulse.order, 10);
        assert_eq!(cfg.toa_mode, ToaMode::StartCorrected);
        assert_eq!(cfg.n_pos, 10);
    }

    #[test]
    fn relative_paths_follow_config_dir() {
        let cfg = ExperimentConfig::from_toml_str("absorption_path = \"k.csv\"", Some(Path::new("/tmp/x"))).unwrap();
        assert_eq!(cfg.absorption_path.unwrap(), PathBuf::from("/tmp/x/k.csv"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("n_runs = 3", None).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::paper("/data/k.csv");
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string(), None).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn static_validation() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate_static().is_ok());
        let short = ExperimentConfig { observation_s: 5e-9, ..ok.clone() };
        assert!(short.validate_static().is_err());
        let empty = ExperimentConfig { n_run: 0, ..ok.clone() };
        assert!(empty.validate_static().is_err());
        let fast = ExperimentConfig { sampling_rates_hz: vec![30e12], ..ok.clone() };
        assert!(fast.validate_static().is_err());
        let no_banks = ExperimentConfig { banks: vec![], ..ok };
        assert!(no_banks.validate_static().is_err());
    }
}
