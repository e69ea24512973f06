use coarselat_core::analysis::{fit_rate, FitMode};
use coarselat_core::{
    integrate_backward, integrate_forward, Configuration, IntegratorPolicy, ModelParams, Trajectory,
};
use proptest::prelude::*;

fn params(beta: f64) -> ModelParams {
    ModelParams::new(beta, 1.0 / 6.0).unwrap()
}

fn sup_diff(a: &Configuration, b: &Configuration) -> f64 {
    a.masses()
        .iter()
        .zip(b.masses())
        .fold(0.0, |acc: f64, (x, y)| acc.max((x - y).abs()))
}

#[test]
fn forward_scaling_symmetry() {
    // x_l(t) = l^(1/(beta-1)) x(l t) solves the same equation.
    let (beta, lambda): (f64, f64) = (0.5, 4.0);
    let s = lambda.powf(1.0 / (beta - 1.0));
    let p = params(beta);
    let pol = IntegratorPolicy::for_params(&p);
    let x0 = Configuration::random_uniform(0.6, 1.4, 24, 5).unwrap();
    let y0 = x0.scaled(s);
    for t in [0.05, 0.2] {
        let x = integrate_forward(&x0, &p, lambda * t, &pol).unwrap();
        let y = integrate_forward(&y0, &p, t, &pol).unwrap();
        let err = sup_diff(y.last(), &x.last().scaled(s));
        assert!(err <= 1e-5, "t = {t}: {err}");
    }
}

#[test]
fn vanishing_rate_near_extinction() {
    for beta in [-1.0, -0.5] {
        let p = params(beta);
        let x0 = Configuration::periodic_pattern(&[2.0, 1.0], 8).unwrap();
        let traj = integrate_forward(&x0, &p, 5.0, &IntegratorPolicy::for_params(&p)).unwrap();
        let ev = traj.vanish_events().next().expect("mass-1 sites vanish");
        let (tv, k) = (ev.time, ev.site);
        let (mut gaps, mut masses) = (Vec::new(), Vec::new());
        for (t, s) in traj.times.iter().zip(&traj.snapshots) {
            let gap = tv - t;
            if gap > 1e-7 * tv && gap < 0.05 * tv {
                gaps.push(gap);
                masses.push(s.get(k));
            }
        }
        gaps.reverse();
        masses.reverse();
        let fit = fit_rate(&gaps, &masses, FitMode::Power).unwrap();
        let want = 1.0 / (1.0 - beta);
        assert!(
            (fit.exponent - want).abs() <= 0.15 * want,
            "beta = {beta}: exponent {} vs {want} over {} samples",
            fit.exponent,
            fit.samples
        );
    }
}

#[test]
fn trajectory_csv_round_trip() {
    let p = params(-1.0);
    let x0 = Configuration::periodic_pattern(&[2.0, 1.0, 1.5], 9).unwrap();
    let traj = integrate_forward(&x0, &p, 3.0, &IntegratorPolicy::for_params(&p).with_record_interval(0.1)).unwrap();
    let back = Trajectory::from_csv(&traj.to_csv()).unwrap();
    assert_eq!(back.times, traj.times);
    assert_eq!(back.snapshots, traj.snapshots);
}

#[test]
fn backward_limit_is_delta_independent() {
    // Zero sites are regularised for beta < 0; halving delta barely moves the run.
    let p = params(-1.0);
    let u0 = Configuration::periodic_pattern(&[1.0, 0.0, 0.0], 30).unwrap();
    let pol = IntegratorPolicy::for_params(&p);
    let a = integrate_backward(&u0, &p, 2.0, 1e-6, &pol).unwrap();
    let b = integrate_backward(&u0, &p, 2.0, 5e-7, &pol).unwrap();
    let err = sup_diff(a.last(), b.last());
    assert!(err < 1e-3, "{err}");
    assert!(a.last().min_mass() > 1e-3);
}

#[test]
fn backward_time_lipschitz_for_positive_beta() {
    for beta in [0.5, 1.0] {
        let p = params(beta);
        let u0 = Configuration::random_uniform(0.0, 1.0, 40, 9).unwrap();
        let traj = integrate_backward(&u0, &p, 2.0, 0.0, &IntegratorPolicy::for_params(&p)).unwrap();
        for w in traj.times.windows(2).zip(traj.snapshots.windows(2)) {
            let (t, s) = w;
            let du = sup_diff(&s[0], &s[1]);
            assert!(du <= 4.0 * (t[1] - t[0]) * (1.0 + 1e-9), "beta = {beta}, t = {}", t[0]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_growth_bound(seed in 0u64..1000, beta in prop_oneof![Just(1.0), 0.2f64..0.9]) {
        let p = params(beta);
        let x0 = Configuration::random_uniform(0.1, 2.0, 16, seed).unwrap();
        let traj = integrate_forward(&x0, &p, 1.0, &IntegratorPolicy::for_params(&p)).unwrap();
        let m0 = x0.max_mass();
        for (&t, s) in traj.times.iter().zip(&traj.snapshots) {
            let bound = if beta == 1.0 {
                (2.0 * t).exp() * m0
            } else {
                ((1.0 - beta) * 2.0 * t + m0.powf(1.0 - beta)).powf(1.0 / (1.0 - beta))
            };
            prop_assert!(s.max_mass() <= bound + 1e-6);
        }
    }

    #[test]
    fn forward_mass_conservation(seed in 0u64..1000, beta in prop_oneof![Just(-1.0), Just(0.5), Just(1.0), -2.0f64..-0.2]) {
        let p = params(beta);
        let x0 = Configuration::random_uniform(0.2, 2.0, 20, seed).unwrap();
        let traj = integrate_forward(&x0, &p, 2.0, &IntegratorPolicy::for_params(&p)).unwrap();
        let m0 = x0.total_mass();
        for s in &traj.snapshots {
            prop_assert!((s.total_mass() - m0).abs() <= 1e-9 * m0);
        }
        traj.check_invariants().unwrap();
    }

    #[test]
    fn forward_order_preserved_before_vanishing(seed in 0u64..1000, lift in 0.01f64..0.3) {
        let p = params(0.5);
        let pol = IntegratorPolicy::for_params(&p);
        let x0 = Configuration::random_uniform(1.0, 2.0, 12, seed).unwrap();
        let y0 = Configuration::new(x0.masses().iter().map(|v| v + lift).collect()).unwrap();
        let t = 0.05;
        let x = integrate_forward(&x0, &p, t, &pol).unwrap();
        let y = integrate_forward(&y0, &p, t, &pol).unwrap();
        prop_assume!(x.events.is_empty() && y.events.is_empty());
        for (a, b) in x.last().masses().iter().zip(y.last().masses()) {
            prop_assert!(a <= &(b + p.ode_tol));
        }
    }
}
