mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{paper_pulse, STEP};
use sftdoa::detector::{iterative_toa, DetectorBankConfig, ToaEstimate};
use sftdoa::locate::{localize, tdoa_ranges, BsLayout, Position, R1Mode, ToaTriplet};
use sftdoa::pulse::{effective_duration, DEFAULT_ENERGY_FRACTION};
use sftdoa::{SignalTrace, Units};

fn random_trace(seed: u64, len: usize) -> SignalTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..len).map(|_| rng.random::<f64>() - 0.5).collect();
    SignalTrace::new(0.0, STEP, samples, Units::Volts).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn duration_ignores_amplitude(scale in 1e-3f64..1e3) {
        let pulse = paper_pulse();
        let scaled = effective_duration(&pulse.trace.scaled(scale).unwrap(), DEFAULT_ENERGY_FRACTION).unwrap();
        prop_assert!((scaled - pulse.duration).abs() <= 1e-9 * pulse.duration);
    }

    #[test]
    fn duration_ignores_translation(shift in -5e-9f64..5e-9) {
        let pulse = paper_pulse();
        let moved = effective_duration(&pulse.trace.shifted(shift), DEFAULT_ENERGY_FRACTION).unwrap();
        prop_assert!((moved - pulse.duration).abs() <= 1e-6 * pulse.duration);
    }

    #[test]
    fn tdoa_ignores_common_offset(t in prop::array::uniform3(0.0f64..9e-9), c in 0.0f64..1e-9) {
        let base = tdoa_ranges(&ToaTriplet::new(t, 0.0).unwrap()).unwrap();
        let moved = tdoa_ranges(&ToaTriplet::new(t.map(|x| x + c), 0.0).unwrap()).unwrap();
        prop_assert!((base.r21 - moved.r21).abs() < 1e-9);
        prop_assert!((base.r31 - moved.r31).abs() < 1e-9);
    }

    #[test]
    fn refinement_nests_and_reconstructs(seed in any::<u64>(), m in 2u32..7, q in 1u32..4) {
        let trace = random_trace(seed, 20_001);
        let t_ob = 1e-9;
        let cfg = DetectorBankConfig::new(m, q, t_ob, 2e-11).unwrap();
        prop_assume!(cfg.check_resolvable(STEP).is_ok());
        let est = iterative_toa(&trace, &cfg).unwrap();
        let mut lo = 0.0;
        let mut width = t_ob;
        for (i, &tau) in est.per_iteration.iter().enumerate() {
            let w = t_ob / (m as f64).powi(i as i32 + 1);
            prop_assert!(tau >= lo - 1e-6 * STEP);
            prop_assert!(tau + w <= lo + width + 1e-6 * STEP);
            lo = tau;
            width = w;
        }
        prop_assert_eq!(ToaEstimate::reconstruct(&est.selected, m, t_ob).to_bits(), est.tau.to_bits());
        prop_assert!(est.selected.iter().all(|&s| (1..=m).contains(&s)));
    }

    #[test]
    fn exact_geometry_round_trip(x in 0.0f64..2.0, y in 0.0f64..2.0) {
        let layout = BsLayout::square(2.0).unwrap();
        let node = Position::new(x, y);
        let toas = ToaTriplet::new(layout.arrival_times(&node), 0.0).unwrap();
        let p = localize(&layout, &toas, R1Mode::KnownClock, 2.0).unwrap();
        prop_assert!(p.distance(&node) < 1e-9);
    }

    #[test]
    fn corrected_clock_offset_is_invisible(x in 0.01f64..2.0, y in 0.01f64..2.0, c in 0.0f64..5e-9) {
        let layout = BsLayout::square(2.0).unwrap();
        let node = Position::new(x, y);
        let toas = layout.arrival_times(&node).map(|t| t + c);
        let p = localize(&layout, &ToaTriplet::new(toas, c).unwrap(), R1Mode::KnownClock, 2.0).unwrap();
        prop_assert!(p.distance(&node) < 1e-8);
    }
}
