use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phasesync::channel::{Channel, ChannelModel};
use phasesync::locking::{
    build_arrays, default_time_scan, detect_detuning, flatness_test, lock_loop, run_lock_scan,
    AtomArray, Layout, LockController, LockError, LockProfile, LockSetup, Sampling,
};
use phasesync::protocol::ProtocolConfig;

fn setup(sampling: Sampling, samples: u64, seed: u64) -> LockSetup {
    LockSetup::new(
        ProtocolConfig::new(0.0, 0.0, 0.05, 1, seed),
        samples,
        sampling,
    )
}

fn scan(n: usize, delta: f64, s: &LockSetup, seed: u64) -> (AtomArray, LockProfile) {
    let (alice, bob) = build_arrays(n, 1.0, 1.0 + delta, Layout::Uniform).unwrap();
    let times = default_time_scan(&s.config, s.scan_points).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profile = run_lock_scan(&alice, &bob, s, &times, &mut rng).unwrap();
    (alice, profile)
}

#[test]
fn phase_mismatch_spans_two_pi_delta() {
    let delta = 1e-3;
    let (a, b) = build_arrays(8, 1.0, 1.0 + delta, Layout::Uniform).unwrap();
    let n = a.len() - 1;
    let span = a.positions[n] - a.positions[0];
    let mismatch = |i: usize| b.local_phase(0.0, i) - a.local_phase(0.0, i);
    assert!(((mismatch(n) - mismatch(0)) - 2.0 * PI * delta * span).abs() < 1e-15);
}

#[test]
fn exact_born_recovers_detuning() {
    let s = setup(Sampling::ExactBorn, 10_000, 1);
    for (n, delta) in [(8, 1e-3), (8, -2e-3), (2, 1e-3), (5, 5e-3)] {
        let (alice, profile) = scan(n, delta, &s, 1);
        let est = detect_detuning(&profile, &alice).unwrap();
        assert!(
            (est.delta_omega_hat / delta - 1.0).abs() < 1e-6,
            "N {n}: {}",
            est.delta_omega_hat
        );
        assert!(!est.aliased);
        for p in &profile.per_position {
            assert!(
                (0.0..=1.0).contains(&p.success_probability),
                "{}",
                p.success_probability
            );
        }
    }
}

#[test]
fn shot_noise_estimate_within_three_stderr() {
    let s = setup(Sampling::Binomial, 10_000, 2);
    let (alice, profile) = scan(8, 1e-3, &s, 17);
    let est = detect_detuning(&profile, &alice).unwrap();
    assert!(
        (est.delta_omega_hat - 1e-3).abs() <= 3.0 * est.stderr,
        "{} +- {}",
        est.delta_omega_hat,
        est.stderr
    );
}

#[test]
fn zero_detuning_is_flat() {
    for sampling in [Sampling::ExactBorn, Sampling::Binomial] {
        let s = setup(sampling, 10_000, 3);
        let (alice, profile) = scan(8, 0.0, &s, 5);
        assert!(flatness_test(&profile, 0.99).flat);
        let est = detect_detuning(&profile, &alice).unwrap();
        assert!(est.delta_omega_hat.abs() <= 3.0 * est.stderr.max(1e-12));
    }
}

#[test]
fn spatial_variation_grows_with_detuning() {
    let s = setup(Sampling::ExactBorn, 10_000, 4);
    let mut last = 0.0;
    for delta in [1e-3, 3e-3, 1e-2, 3e-2, 0.1] {
        let (_, profile) = scan(8, delta, &s, 1);
        let p: Vec<f64> = profile
            .per_position
            .iter()
            .map(|p| p.success_probability)
            .collect();
        let range =
            p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min);
        assert!(range > last, "delta {delta}: {range} <= {last}");
        last = range;
    }
}

#[test]
fn aliasing_is_flagged() {
    let s = setup(Sampling::ExactBorn, 10_000, 5);
    let (alice, profile) = scan(2, 0.3, &s, 1);
    assert!(detect_detuning(&profile, &alice).unwrap().aliased);
    let (alice, profile) = scan(2, 0.2, &s, 1);
    assert!(!detect_detuning(&profile, &alice).unwrap().aliased);
}

#[test]
fn exact_loop_contracts_by_one_minus_gain() {
    for gain in [0.25, 0.8, 1.6] {
        let s = setup(Sampling::ExactBorn, 10_000, 6);
        let mut c = LockController::new(gain, 1.0).unwrap();
        let mut ch = Channel::new(ChannelModel::default()).unwrap();
        let out = lock_loop(&mut c, 2e-3, 4, 8, &s, &mut ch).unwrap();
        let mut d: Vec<f64> = out.history.iter().map(|r| r.delta).collect();
        d.push(out.final_delta);
        for w in d.windows(2) {
            assert!(
                (w[1].abs() / w[0].abs() - (1.0 - gain).abs()).abs() < 1e-6,
                "gain {gain}: {d:?}"
            );
        }
        assert!(!out.non_convergence);
    }
}

#[test]
fn overdriven_loop_reports_non_convergence() {
    let s = setup(Sampling::ExactBorn, 10_000, 7);
    let mut c = LockController::new(2.5, 1.0).unwrap();
    let mut ch = Channel::new(ChannelModel::default()).unwrap();
    let out = lock_loop(&mut c, 1e-3, 20, 4, &s, &mut ch).unwrap();
    assert!(out.non_convergence);
    assert!(out.history.len() < 20);
}

#[test]
fn bad_inputs() {
    assert!(matches!(
        build_arrays(1, 1.0, 1.0, Layout::Uniform),
        Err(LockError::BadLayout(_))
    ));
    assert!(matches!(
        build_arrays(2, 1.0, 1.0, Layout::Explicit(vec![0.2, 1.0])),
        Err(LockError::BadLayout(_))
    ));
    assert!(matches!(
        build_arrays(3, 1.0, 1.0, Layout::Explicit(vec![0.0, 0.5])),
        Err(LockError::BadLayout(_))
    ));
    assert!(LockController::new(0.0, 1.0).is_err());
    let mut s = setup(Sampling::Binomial, 0, 1);
    let (alice, bob) = build_arrays(2, 1.0, 1.0, Layout::Uniform).unwrap();
    let times = default_time_scan(&s.config, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        run_lock_scan(&alice, &bob, &s, &times, &mut rng),
        Err(LockError::InvalidSetup(_))
    ));
    s.samples_per_atom = 10;
    s.scan_points = 2;
    assert!(matches!(
        run_lock_scan(&alice, &bob, &s, &times, &mut rng),
        Err(LockError::InvalidSetup(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arrays_are_matched_and_ordered(n in 2usize..64, delta in -0.1..0.1f64) {
        let (a, b) = build_arrays(n, 1.0, 1.0 + delta, Layout::Uniform).unwrap();
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(b.len(), n);
        prop_assert!(a.positions.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(a.positions.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn controller_step_is_clamped(gain in 0.01..3.0f64, max_step in 1e-6..1e-1f64, est in -1.0..1.0f64) {
        let c = LockController::new(gain, max_step).unwrap();
        let step = c.step(est);
        prop_assert!(step.abs() <= max_step);
        if (gain * est).abs() <= max_step {
            prop_assert_eq!(step, gain * est);
        }
    }
}
