//! AEDE, sweep tables and result files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::runner::{EstimatorTag, ExperimentOutput, ToaRecord, TrialResult};
use crate::error::{Error, Result};

/// Mean over positions of the mean-over-runs error, from
/// `(position, run, error)` triples.
///
/// Every position must carry the same set of runs, each exactly once.
pub fn aede_from_errors(cells: &[(usize, usize, f64)]) -> Result<f64> {
    let mut by_position: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for &(p, r, e) in cells {
        if by_position.entry(p).or_default().insert(r, e).is_some() {
            return Err(Error::Results(format!("duplicate result for position {p}, run {r}")));
        }
    }
    let mut positions = by_position.values();
    let Some(first) = positions.next() else {
        return Err(Error::Results("no results to average".into()));
    };
    if positions.any(|runs| !runs.keys().eq(first.keys())) {
        return Err(Error::Results("positions carry different sets of runs".into()));
    }
    let total: f64 = by_position
        .values()
        .map(|runs| runs.values().sum::<f64>() / runs.len() as f64)
        .sum();
    Ok(total / by_position.len() as f64)
}

/// AEDE of results that all come from one estimator.
pub fn aede(trials: &[TrialResult]) -> Result<f64> {
    if let Some(first) = trials.first() {
        if trials.iter().any(|t| t.estimator != first.estimator) {
            return Err(Error::Results("results mix several estimators".into()));
        }
    }
    let cells: Vec<_> = trials.iter().map(|t| (t.position, t.run, t.error_m)).collect();
    aede_from_errors(&cells)
}

/// AEDE per estimator, in the order the estimators were configured.
pub fn aede_by_estimator(output: &ExperimentOutput) -> Result<Vec<(EstimatorTag, f64)>> {
    output
        .estimators
        .iter()
        .map(|tag| {
            let own: Vec<TrialResult> = output.trials.iter().filter(|t| t.estimator == *tag).cloned().collect();
            Ok((*tag, aede(&own)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryPoint {
    pub estimator: String,
    pub kind: &'static str,
    pub alpha: Option<u64>,
    pub rate_hz: Option<f64>,
    pub aede_m: f64,
    /// Robust companion to the AEDE; rare noise captures barely move it.
    pub median_error_m: f64,
    pub max_error_m: f64,
    pub trials: usize,
    pub flagged: usize,
    pub toa_offset_s: f64,
}

/// Deterministic run summary; timings live in a separate file.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub pulse_duration_s: f64,
    pub points: Vec<SummaryPoint>,
}

pub fn summarize(cfg: &ExperimentConfig, output: &ExperimentOutput) -> Result<Summary> {
    let points = aede_by_estimator(output)?
        .into_iter()
        .map(|(tag, aede_m)| {
            let own: Vec<&TrialResult> = output.trials.iter().filter(|t| t.estimator == tag).collect();
            let mut errors: Vec<f64> = own.iter().map(|t| t.error_m).collect();
            errors.sort_by(f64::total_cmp);
            SummaryPoint {
                estimator: tag.to_string(),
                kind: tag.kind(),
                alpha: tag.alpha(),
                rate_hz: tag.rate_hz(),
                aede_m,
                median_error_m: median_sorted(&errors),
                max_error_m: errors.last().copied().unwrap_or(0.0),
                trials: own.len(),
                flagged: own.iter().filter(|t| t.flagged).count(),
                toa_offset_s: own.first().map_or(0.0, |t| t.offset),
            }
        })
        .collect();
    Ok(Summary {
        config: cfg.clone(),
        pulse_duration_s: output.pulse_duration,
        points,
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub estimator: String,
    pub kind: &'static str,
    pub alpha: Option<u64>,
    pub rate_hz: Option<f64>,
    pub aede_m: f64,
    pub runtime_s: f64,
}

/// One row per estimator: detector banks by ascending `alpha`, then the
/// sampling baseline by ascending rate.
pub fn sweep_report(output: &ExperimentOutput) -> Result<Vec<SweepRow>> {
    let mut rows: Vec<SweepRow> = aede_by_estimator(output)?
        .into_iter()
        .zip(&output.estimator_time)
        .map(|((tag, aede_m), time)| SweepRow {
            estimator: tag.to_string(),
            kind: tag.kind(),
            alpha: tag.alpha(),
            rate_hz: tag.rate_hz(),
            aede_m,
            runtime_s: time.as_secs_f64(),
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.kind != "ctma")
            .cmp(&(b.kind != "ctma"))
            .then(a.alpha.cmp(&b.alpha))
            .then(a.rate_hz.unwrap_or(0.0).total_cmp(&b.rate_hz.unwrap_or(0.0)))
    });
    Ok(rows)
}

#[derive(Serialize)]
struct TrialRow<'a> {
    position: usize,
    run: usize,
    estimator: &'a str,
    kind: &'static str,
    alpha: Option<u64>,
    rate_hz: Option<f64>,
    x: f64,
    y: f64,
    x_hat: f64,
    y_hat: f64,
    toa1_s: f64,
    toa2_s: f64,
    toa3_s: f64,
    offset_s: f64,
    error_m: f64,
    flagged: bool,
}

pub fn write_trials_csv(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in trials {
        let label = t.estimator.to_string();
        w.serialize(TrialRow {
            position: t.position,
            run: t.run,
            estimator: &label,
            kind: t.estimator.kind(),
            alpha: t.estimator.alpha(),
            rate_hz: t.estimator.rate_hz(),
            x: t.truth.x,
            y: t.truth.y,
            x_hat: t.estimate.x,
            y_hat: t.estimate.y,
            toa1_s: t.toas[0],
            toa2_s: t.toas[1],
            toa3_s: t.toas[2],
            offset_s: t.offset,
            error_m: t.error_m,
            flagged: t.flagged,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Timing {
    wall_time_s: f64,
    estimator_time_s: BTreeMap<String, f64>,
}

pub fn write_timing_json(path: &Path, output: &ExperimentOutput) -> Result<()> {
    let timing = Timing {
        wall_time_s: output.wall_time.as_secs_f64(),
        estimator_time_s: output
            .estimators
            .iter()
            .zip(&output.estimator_time)
            .map(|(tag, t)| (tag.to_string(), t.as_secs_f64()))
            .collect(),
    };
    write_json(path, &timing)
}

/// `trials.csv`, `summary.json` and `timing.json` under `dir`.
pub fn write_run_outputs(dir: &Path, cfg: &ExperimentConfig, output: &ExperimentOutput) -> Result<Summary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trials_csv(&dir.join("trials.csv"), &output.trials)?;
    let summary = summarize(cfg, output)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_timing_json(&dir.join("timing.json"), output)?;
    Ok(summary)
}

/// Mean and sample standard deviation of the corrected estimate per estimator.
pub fn toa_statistics(records: &[ToaRecord]) -> Vec<(String, f64, f64)> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(name, _)| *name == r.estimator) {
            Some((_, v)) => v.push(r.corrected_s),
            None => groups.push((r.estimator.clone(), vec![r.corrected_s])),
        }
    }
    groups
        .into_iter()
        .map(|(name, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (name, mean, var.sqrt())
        })
        .collect()
}
