use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treat_core::data::sample_initial_state;
use treat_core::dynamics::{Scheme, StateVector};
use treat_core::physics::{analytic_solution_simple_spring_1d, SystemKind, SystemSpec};
use treat_core::verify::{
    energy_classification_check, expected_energy_rate, lemma1_roundtrip, lemma1_sweep, lemma2_construction_check,
    log_log_fit, lyapunov_mle, scaling_point, theorem1_scaling, EnergyCheckConfig, LyapunovConfig, ScalingConfig,
    VerifyError,
};

#[test]
fn exact_flow_round_trip_is_identity() {
    let (k, m, span) = (0.1, 1.0, 7.3);
    let (q1, p1) = analytic_solution_simple_spring_1d(0.8, -0.3, k, m, span);
    let (q2, p2) = analytic_solution_simple_spring_1d(q1, -p1, k, m, span);
    assert!((q2 - 0.8).abs() < 1e-14 && (-p2 + 0.3).abs() < 1e-14);
}

#[test]
fn rk4_round_trip_shrinks_at_fifth_order() {
    let mut stiff = SystemSpec::new(SystemKind::SimpleSpring, 1).with_dim(1);
    stiff.spring_k = 400.0;
    let s0 = StateVector::from_qp(1, &[1.0], &[0.0]).unwrap();
    let r = lemma1_sweep(&stiff, &s0, Scheme::Rk4, &[1e-3, 5e-4, 2.5e-4], 10.0).unwrap();
    for ratio in &r.ratios {
        assert!(*ratio > 24.0 && *ratio < 40.0, "{:?}", r.ratios);
    }
}

#[test]
fn friction_round_trip_does_not_vanish() {
    let damped = SystemSpec::new(SystemKind::DampedSpring, 1).with_dim(1);
    let s0 = StateVector::from_qp(1, &[1.0], &[0.0]).unwrap();
    let coarse = lemma1_roundtrip(&damped, &s0, Scheme::Rk4, 1e-3, 1.0).unwrap();
    let fine = lemma1_roundtrip(&damped, &s0, Scheme::Rk4, 2.5e-4, 1.0).unwrap();
    assert!(fine > 1e-3);
    assert!((coarse - fine).abs() < 1e-9 * fine);
}

#[test]
fn round_trip_needs_whole_steps() {
    let spec = SystemSpec::new(SystemKind::SimpleSpring, 1);
    let s0 = StateVector::zeros(1, 2, 2);
    assert!(matches!(lemma1_roundtrip(&spec, &s0, Scheme::Rk4, 0.3, 1.0), Err(VerifyError::Config(_))));
}

#[test]
fn euler_reconstruction_loss_scales_with_dt_squared() {
    let spec = SystemSpec::new(SystemKind::SimpleSpring, 1).with_dim(1);
    let r = theorem1_scaling(&spec, &ScalingConfig::new(Scheme::Euler)).unwrap();
    assert!((r.pred_dt_fit.slope - 2.0).abs() < 0.3 && r.pred_dt_fit.r_squared > 0.98, "{:?}", r.pred_dt_fit);
}

#[test]
fn second_order_scheme_separates_the_two_losses() {
    let spec = SystemSpec::new(SystemKind::SimpleSpring, 1).with_dim(1);
    let r = theorem1_scaling(&spec, &ScalingConfig::new(Scheme::Heun)).unwrap();
    assert!(r.slope_gap() >= 1.5, "gap {}", r.slope_gap());
    assert!(r.reverse_bound_ratio() <= 10.0);
    // longer horizons never help either loss
    for w in r.span_sweep.windows(2) {
        assert!(w[1].l_pred >= w[0].l_pred && w[1].l_reverse >= w[0].l_reverse);
    }
    assert!(r.pred_span_fit.slope > 0.0 && r.reverse_span_fit.slope > 0.0);
    assert!(r.to_csv().lines().count() == 1 + 5 + 4);
}

#[test]
fn exact_vector_field_gives_zero_losses_at_the_start() {
    let spec = SystemSpec::new(SystemKind::SimpleSpring, 1).with_dim(1);
    let mut cfg = ScalingConfig::new(Scheme::Rk4);
    cfg.output_interval = 0.2;
    let p = scaling_point(&spec, &cfg, 0.2, 0.2).unwrap();
    // one RK4 step of an oscillator with ω = 0.316: local error is about (ωh)^5 / 120
    assert!(p.l_pred < 1e-16 && p.l_reverse < 1e-16, "{p:?}");
}

#[test]
fn scaling_rejects_short_sweeps() {
    let spec = SystemSpec::new(SystemKind::SimpleSpring, 1).with_dim(1);
    let mut cfg = ScalingConfig::new(Scheme::Euler);
    cfg.dts.truncate(3);
    assert!(matches!(theorem1_scaling(&spec, &cfg), Err(VerifyError::Config(_))));
    let wrong = SystemSpec::new(SystemKind::SimpleSpring, 2).with_dim(1);
    assert!(theorem1_scaling(&wrong, &ScalingConfig::new(Scheme::Euler)).is_err());
}

#[test]
fn lemma2_worked_example() {
    assert_eq!(lemma2_construction_check(0.3, 0.4), (0.4, 0.3 + 0.4));
    assert_eq!(lemma2_construction_check(0.2, 0.0), (0.2, 0.2));
}

#[test]
fn energy_claims_hold_for_each_spring_kind() {
    let cfg = EnergyCheckConfig {
        n_trajectories: 2,
        steps: 3000,
        ..EnergyCheckConfig::default()
    };
    for kind in [SystemKind::SimpleSpring, SystemKind::DampedSpring, SystemKind::ForcedSpring] {
        let r = energy_classification_check(&SystemSpec::new(kind, 3), &cfg).unwrap();
        assert!(r.passed(), "{:?}", r.checks);
    }
    let pend = SystemSpec::new(SystemKind::TriplePendulum, 3);
    assert!(energy_classification_check(&pend, &cfg).is_err());
}

#[test]
fn friction_loss_identity_is_tight() {
    let cfg = EnergyCheckConfig {
        n_trajectories: 2,
        steps: 2000,
        rate_tol: 1e-8,
        ..EnergyCheckConfig::default()
    };
    let r = energy_classification_check(&SystemSpec::new(SystemKind::DampedSpring, 2), &cfg).unwrap();
    assert!(r.passed(), "{:?}", r.checks);
}

#[test]
fn forcing_work_sign() {
    // moving along +x while the force pushes along -x costs energy
    let spec = SystemSpec::new(SystemKind::ForcedSpring, 1);
    let s = StateVector::from_qp(1, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
    assert!(expected_energy_rate(&spec, &s, 0.0) < 0.0);
    assert_eq!(expected_energy_rate(&SystemSpec::new(SystemKind::SimpleSpring, 1), &s, 0.0), 0.0);
}

#[test]
fn pendulum_is_far_more_chaotic_than_springs() {
    let mle = |kind, n| {
        let spec = SystemSpec::new(kind, n);
        let base = sample_initial_state(&spec, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        lyapunov_mle(&spec, &base, &LyapunovConfig::for_system(kind)).unwrap()
    };
    let pend = mle(SystemKind::TriplePendulum, 3);
    let spring = mle(SystemKind::SimpleSpring, 5);
    assert_eq!(pend.n_pairs, 45);
    assert!(pend.mean > 10.0 * spring.mean, "{} vs {}", pend.mean, spring.mean);
    let again = mle(SystemKind::TriplePendulum, 3);
    assert_eq!(pend, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn endpoint_start_never_loses(a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let (ours, theirs) = lemma2_construction_check(a, b);
        prop_assert!(ours <= theirs);
        prop_assert!((ours - a.max(b)).abs() <= 1e-12 * (1.0 + a + b));
        prop_assert!((theirs - (a + b)).abs() <= 1e-12 * (1.0 + a + b));
        if a > 0.0 && b > 0.0 {
            prop_assert!(ours < theirs);
        }
    }
}

proptest! {
    #[test]
    fn fit_recovers_exact_power_laws(slope in -6.0f64..6.0, c in 0.1f64..10.0) {
        let xs = [0.02, 0.01, 0.005, 0.0025];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| c * x.powf(slope)).collect();
        let f = log_log_fit(&xs, &ys).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-9);
        prop_assert!(f.r_squared > 0.999_999 || slope.abs() < 1e-6);
    }
}
