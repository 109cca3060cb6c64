use proptest::prelude::*;

use nvreso_core::resonator::{
    compensated_gain, duty_cycle_compensation, enhancement_factor, loaded_q, simulate_tuning_loop, CalibrationTable,
    ControllerState, ResonatorState, ThermalPlant,
};

#[test]
fn chevron_scale_from_internal_q() {
    assert!((loaded_q(752.0, 252.7) - 189.1).abs() < 0.05);
    assert!((loaded_q(752.0, 1e15) - 752.0).abs() < 1e-9);
}

#[test]
fn half_power_at_half_linewidth() {
    let r = ResonatorState::new(2.967, 1275.0, 1328.0).unwrap();
    let hwhm = r.f0 * 1e3 / (2.0 * r.q_loaded());
    let m = enhancement_factor(&r, hwhm, 0.0).unwrap();
    assert!((m * m - 0.5).abs() < 1e-12);
}

#[test]
fn enhancement_flat_as_q_vanishes() {
    let r = ResonatorState::new(2.967, 1e-9, 1e-9).unwrap();
    for d in [-100.0, 0.0, 37.0] {
        assert!((enhancement_factor(&r, d, 0.0).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn half_reflection_loses_three_db() {
    let g = compensated_gain(-10.0 * 2f64.log10()).unwrap();
    assert!((g + 3.0103).abs() < 1e-4);
    assert_eq!(compensated_gain(0.0).unwrap(), f64::NEG_INFINITY);
    assert!(compensated_gain(0.5).is_err());
}

#[test]
fn shipped_fixture_files_match_embedded_plant() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let t = CalibrationTable::from_csv(&dir.join("temperature_frequency.csv")).unwrap();
    let l = CalibrationTable::from_csv(&dir.join("laser_power_frequency.csv")).unwrap();
    let plant = ThermalPlant::fixture();
    assert_eq!(t, plant.freq_vs_temp);
    assert_eq!(l, plant.freq_vs_laser_power);
    // frequency rises with both temperature and heating power
    for table in [&t, &l] {
        let pts: Vec<(f64, f64)> = table.points().collect();
        assert!(pts.windows(2).all(|w| w[1].1 > w[0].1));
    }
}

#[test]
fn open_loop_without_gains() {
    let plant = ThermalPlant::fixture();
    let bias = plant.freq_vs_laser_power.invert(2.967).unwrap();
    let ctrl = ControllerState::new(0.0, 0.0, 2.967, bias, 100.0).unwrap();
    let trace = simulate_tuning_loop(&plant, &ctrl, 2.967, 0.05, 400, |t| if t > 1.0 { 0.01 } else { 0.0 }).unwrap();
    assert!(trace.iter().all(|s| s.output == bias));
    // the full disturbance comes through: 1 − e^{-t/τ} of 10 MHz
    let last = trace.last().unwrap();
    let expect = 0.01 * (1.0 - (-(last.t - 1.0 - 0.05) / plant.tau_thermal).exp());
    assert!((last.f0 - 2.967 - expect).abs() < 2e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lock_settles_for_steps_up_to_10_mhz(step_mhz in -10.0f64..10.0, at in 0.0f64..5.0) {
        let plant = ThermalPlant::fixture();
        let ctrl = ControllerState::default_for(&plant, 2.967).unwrap();
        let dt = 0.05;
        let steps = ((at + 10.0 * plant.tau_thermal) / dt).round() as usize;
        let trace = simulate_tuning_loop(&plant, &ctrl, 2.967, dt, steps, |t| {
            if t >= at { step_mhz * 1e-3 } else { 0.0 }
        }).unwrap();
        prop_assert!(trace.iter().all(|s| (0.0..=ctrl.max_output).contains(&s.output)));
        prop_assert!(trace.last().unwrap().error.abs() * 1e3 <= 0.5);
    }

    #[test]
    fn duty_cycle_sum_is_constant(total in 1.0f64..100.0, fracs in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        for f in fracs {
            let t1 = f * total;
            let t2 = duty_cycle_compensation(t1, total).unwrap();
            prop_assert!(t2 >= 0.0);
            prop_assert!((t1 + t2 - total).abs() <= f64::EPSILON * total);
        }
        prop_assert!(duty_cycle_compensation(total * 1.01, total).is_err());
    }
}
