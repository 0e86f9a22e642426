mod common;

use common::{paper_pulse, paper_table, STEP};
use sftdoa::channel::{
    noise_variance, AbsorptionTable, ChannelSpec, NoiseMode, Propagator, PulsePsd, TimeWindow,
};
use sftdoa::{SignalTrace, Units, BOLTZMANN, SPEED_OF_LIGHT};

fn spec() -> ChannelSpec {
    ChannelSpec { range_m: 1.0, center_frequency_hz: 200e9, band_hz: (100e9, 300e9), temperature_k: 296.0 }
}

fn propagator(table: &AbsorptionTable, pulse: &SignalTrace, window: TimeWindow) -> Propagator {
    Propagator::new(pulse, 0.0, spec(), table, window, 1e-6).unwrap()
}

fn window() -> TimeWindow {
    TimeWindow { start: -2e-11, end: 10e-9 }
}

#[test]
fn propagation_is_deterministic_per_seed() {
    let pulse = paper_pulse();
    let p = propagator(&paper_table(), &pulse.trace, window());
    let a = p.propagate(1.3, NoiseMode::Model, 42).unwrap();
    let b = p.propagate(1.3, NoiseMode::Model, 42).unwrap();
    let c = p.propagate(1.3, NoiseMode::Model, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn energy_centroid_moves_by_travel_time() {
    let pulse = paper_pulse();
    let p = propagator(&paper_table(), &pulse.trace, window());
    let sent = pulse.trace.energy_centroid().unwrap();
    for range in [0.1, 0.77, 1.5, 2.82] {
        let got = p.propagate(range, NoiseMode::Off, 0).unwrap().energy_centroid().unwrap();
        assert!((got - sent - range / SPEED_OF_LIGHT).abs() <= STEP, "range {range}: {:e}", got - sent);
    }
}

#[test]
fn received_energy_falls_with_range() {
    let pulse = paper_pulse();
    let p = propagator(&paper_table(), &pulse.trace, window());
    let energies: Vec<f64> = (1..=28)
        .map(|i| p.propagate(i as f64 * 0.1, NoiseMode::Off, 0).unwrap().energy())
        .collect();
    assert!(energies.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn cross_correlation_peaks_at_delay() {
    let pulse = paper_pulse();
    let lossless = AbsorptionTable::constant(0.0, 50e9, 500e9).unwrap();
    let p = propagator(&lossless, &pulse.trace, window());
    for delay in [1e-9, 3.3e-9, 5e-9] {
        let rx = p.propagate(delay * SPEED_OF_LIGHT, NoiseMode::Off, 0).unwrap();
        let tx = pulse.trace.samples();
        let lag0 = pulse.trace.start_time() - rx.start_time();
        let best = (0..rx.len() - tx.len())
            .map(|k| (k, tx.iter().zip(&rx.samples()[k..]).map(|(a, b)| a * b).sum::<f64>()))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        let lag = best.0 as f64 * STEP - lag0;
        assert!((lag - delay).abs() <= STEP, "{lag:e} vs {delay:e}");
    }
}

#[test]
fn synthesized_noise_has_the_model_variance() {
    let pulse = paper_pulse();
    let table = paper_table();
    let p = propagator(&table, &pulse.trace, window());
    for range in [0.3, 2.0] {
        let clean = p.propagate(range, NoiseMode::Off, 0).unwrap();
        let mut acc = 0.0;
        let mut n = 0usize;
        for seed in 0..6 {
            let noisy = p.propagate(range, NoiseMode::Model, seed).unwrap();
            for (a, b) in noisy.samples().iter().zip(clean.samples()) {
                acc += (a - b).powi(2);
                n += 1;
            }
        }
        assert!(n >= 1_000_000);
        let expected = p.noise_variance(range).unwrap();
        let measured = acc / n as f64;
        assert!((measured / expected - 1.0).abs() < 0.05, "{measured:e} vs {expected:e}");
    }
}

#[test]
fn noise_decorrelates_beyond_inverse_bandwidth() {
    let pulse = paper_pulse();
    let zero = SignalTrace::zeros(pulse.trace.start_time(), STEP, pulse.trace.len(), Units::Volts).unwrap();
    let p = Propagator::new(&zero, 0.0, spec(), &paper_table(), TimeWindow { start: 0.0, end: 60e-9 }, 1e-6).unwrap();
    let noise = p.propagate(1.0, NoiseMode::Model, 9).unwrap();
    let s = noise.samples();
    let acf = |lag: usize| s.iter().zip(&s[lag..]).map(|(a, b)| a * b).sum::<f64>() / (s.len() - lag) as f64;
    let r0 = acf(0);
    // 1/B = 5 ps = 100 grid steps
    for lag in [2_000, 5_000, 10_000] {
        assert!(acf(lag).abs() < 0.05 * r0, "lag {lag}: {:e}", acf(lag) / r0);
    }
}

#[test]
fn variance_approaches_background_at_long_range() {
    let pulse = paper_pulse();
    let table = paper_table();
    let psd = PulsePsd::from_trace(&pulse.trace, (100e9, 300e9), 1e-6);
    let aperture = (SPEED_OF_LIGHT / ((4.0 * std::f64::consts::PI).sqrt() * 200e9)).powi(2);
    let background = BOLTZMANN * 296.0 * aperture * 200e9;
    let near = noise_variance(&spec().with_range(0.05), &table, &psd).unwrap();
    let far = noise_variance(&spec().with_range(1e4), &table, &psd).unwrap();
    assert!(near > far);
    assert!((far / background - 1.0).abs() < 1e-6);
    let mut previous = f64::INFINITY;
    for r in [0.1, 0.5, 1.0, 2.0, 2.83] {
        let v = noise_variance(&spec().with_range(r), &table, &psd).unwrap();
        assert!(v > background && v < previous);
        previous = v;
    }
    let hot = ChannelSpec { temperature_k: 320.0, ..spec() };
    assert!(noise_variance(&hot, &table, &psd).unwrap() > noise_variance(&spec(), &table, &psd).unwrap());
}

#[test]
fn window_overflow_is_reported() {
    let pulse = paper_pulse();
    let p = propagator(&paper_table(), &pulse.trace, TimeWindow { start: 0.0, end: 1e-9 });
    let err = p.propagate(0.5, NoiseMode::Off, 0).unwrap_err();
    assert!(err.is_config(), "{err}");
}
