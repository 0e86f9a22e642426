mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{expected_cell, paper_pulse, peak_energy_index, place, STEP, T_OB};
use sftdoa::detector::{
    iterative_toa, lpf_approximation, sampling_toa, DetectorBankConfig, EnergyProfile,
};

fn random_offsets(n: usize, seed: u64, pulse_len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = (T_OB / STEP) as usize - 2 * pulse_len;
    (0..n).map(|_| rng.random_range(pulse_len..max)).collect()
}

#[test]
fn noise_free_error_is_bounded_by_resolution_and_shrinks() {
    let pulse = paper_pulse();
    let w = (pulse.duration / STEP).round() as usize;
    let offsets = random_offsets(200, 11, pulse.trace.len());
    // successive refinements: more branches, then more iterations
    let banks = [(2u32, 6u32), (2, 7), (2, 8), (3, 5), (3, 6), (10, 2), (10, 3)];
    let mut worst = Vec::new();
    for &(m, q) in &banks {
        let cfg = DetectorBankConfig::new(m, q, T_OB, pulse.duration).unwrap();
        let delta = cfg.resolution();
        let mut max_err: f64 = 0.0;
        for &off in &offsets {
            let trace = place(&pulse.trace, off);
            let t_star = peak_energy_index(&trace, w, 2 * w) as f64 * STEP;
            let est = iterative_toa(&trace, &cfg).unwrap();
            max_err = max_err.max((t_star - est.tau).abs());
        }
        assert!(max_err <= delta, "M={m} Q={q}: {max_err:e} > {delta:e}");
        worst.push((delta, max_err));
    }
    for pair in [(0, 1), (1, 2), (3, 4), (5, 6)] {
        let (a, b) = (worst[pair.0], worst[pair.1]);
        assert!(b.0 < a.0 && b.1 <= a.0, "refinement must not loosen the bound");
    }
}

#[test]
fn bank_matches_floor_of_peak_on_propagated_pulses() {
    use sftdoa::channel::{ChannelSpec, NoiseMode, Propagator, TimeWindow};
    let pulse = paper_pulse();
    let w = (pulse.duration / STEP).round() as usize;
    let spec = ChannelSpec { range_m: 1.0, center_frequency_hz: 200e9, band_hz: (100e9, 300e9), temperature_k: 296.0 };
    let window = TimeWindow { start: 0.0, end: T_OB };
    let prop = Propagator::new(&pulse.trace, pulse.duration, spec, &common::paper_table(), window, 1e-6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = DetectorBankConfig::new(10, 2, T_OB, pulse.duration).unwrap();
    for _ in 0..40 {
        let range = rng.random_range(0.05..2.8);
        let trace = prop.propagate(range, NoiseMode::Off, 0).unwrap();
        let k = peak_energy_index(&trace, w, 2 * w);
        let est = iterative_toa(&trace, &cfg).unwrap();
        assert_eq!(est.cell, expected_cell(k, cfg.alpha()), "range {range}");
    }
}

#[test]
fn bank_and_sampling_agree_after_calibration() {
    let pulse = paper_pulse();
    let reference = place(&pulse.trace, 40_000);
    let w = (pulse.duration / STEP).round() as usize;
    let ref_peak = peak_energy_index(&reference, w, 2 * w) as f64 * STEP;
    let lpf = lpf_approximation(&reference, pulse.duration).unwrap();
    let ref_lpf = lpf.time_at(lpf.argmax().0);
    for (m, q) in [(10u32, 2u32), (2, 11), (12, 2)] {
        let cfg = DetectorBankConfig::new(m, q, T_OB, pulse.duration).unwrap();
        let delta = cfg.resolution();
        for off in random_offsets(60, 3 + m as u64, pulse.trace.len()) {
            let trace = place(&pulse.trace, off);
            let shift = (off as f64 - 40_000.0) * STEP;
            let ctma = iterative_toa(&trace, &cfg).unwrap().tau + delta / 2.0 - ref_peak;
            let sampled = sampling_toa(&trace, pulse.duration, 1.0 / delta).unwrap() - ref_lpf;
            assert!((ctma - shift).abs() <= delta / 2.0 + STEP);
            assert!((ctma - sampled).abs() <= delta, "M={m} Q={q}: {ctma:e} vs {sampled:e}");
        }
    }
}

#[test]
fn faster_sampling_never_increases_noise_free_error() {
    let pulse = paper_pulse();
    let reference = place(&pulse.trace, 40_000);
    let lpf_ref = lpf_approximation(&reference, pulse.duration).unwrap();
    let ref_peak = lpf_ref.time_at(lpf_ref.argmax().0);
    let offsets = random_offsets(200, 17, pulse.trace.len());
    let mut previous = f64::INFINITY;
    for rate in [100e9, 300e9, 600e9, 1000e9, 2000e9] {
        let mean: f64 = offsets
            .iter()
            .map(|&off| {
                let lpf = lpf_approximation(&place(&pulse.trace, off), pulse.duration).unwrap();
                let truth = ref_peak + (off as f64 - 40_000.0) * STEP;
                (sftdoa::detector::sampling_toa_from_lpf(&lpf, rate).unwrap() - truth).abs()
            })
            .sum::<f64>()
            / offsets.len() as f64;
        assert!(mean <= 0.5 / rate + STEP, "rate {rate:e}: {mean:e}");
        assert!(mean < previous);
        previous = mean;
    }
}

#[test]
fn profile_matches_direct_windowed_energy() {
    let pulse = paper_pulse();
    let trace = place(&pulse.trace, 1234);
    let profile = EnergyProfile::new(&trace);
    let w = profile.window_samples(pulse.duration);
    for k in (1200..1700).step_by(7) {
        let direct: f64 = trace.samples()[k + 1 - w..=k].iter().map(|v| v * v).sum::<f64>() * STEP;
        assert!((profile.value(k, w) - direct).abs() <= 1e-9 * pulse.energy());
    }
}
