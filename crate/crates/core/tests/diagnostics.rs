use std::f64::consts::PI;

use taf_core::diagnostics::*;
use taf_core::evolution::{self, ModelState, SolverConfig, TrajectorySink};
use taf_core::moments;
use taf_core::spectral::{self, RealField, TorusGrid};

fn smooth(n: usize) -> ModelState {
    let g = TorusGrid::cube(n).unwrap();
    ModelState::band_limited(g, |[x, y, th]| {
        (0.4 + 0.15 * x.cos() * y.cos()) / (2.0 * PI) + 0.03 * (th - x).cos() + 0.01 * (2.0 * y + th).sin()
    })
    .unwrap()
}

fn trajectory(s: &ModelState, config: &SolverConfig) -> Vec<ModelState> {
    let mut sink = TrajectorySink::default();
    evolution::run(s, config, &mut sink).unwrap();
    sink.states
}

fn samples(states: &[ModelState]) -> Vec<(f64, RealField)> {
    states.iter().map(|s| (s.time(), s.f().clone())).collect()
}

#[test]
fn pure_heat_lower_bound_oracle() {
    let g = TorusGrid::cube(16).unwrap();
    let s = ModelState::band_limited(g, |[x, _, _]| (0.5 + 0.4 * x.cos()) / (2.0 * PI)).unwrap();
    let config = SolverConfig {
        dt: Some(1e-2),
        t_end: 1.0,
        drift: false,
        cross_diffusion: false,
        ..SolverConfig::default()
    };
    let track = lower_bound_track(&trajectory(&s, &config));
    for w in track.windows(2) {
        assert!(w[1].min_one_minus_rho > w[0].min_one_minus_rho);
    }
    for lb in &track {
        let exact = 0.5 - 0.4 * (-lb.t).exp();
        assert!((lb.min_one_minus_rho - exact).abs() < 1e-12, "t = {}", lb.t);
        assert_eq!(lb.running_inf, lb.min_one_minus_rho);
    }
}

#[test]
fn constant_density_has_constant_floor() {
    let g = TorusGrid::cube(8).unwrap();
    let s = ModelState::new(RealField::constant(g, 0.5 / (2.0 * PI)), 0.0, 0).unwrap();
    let config = SolverConfig {
        dt: Some(1e-2),
        t_end: 0.1,
        ..SolverConfig::default()
    };
    let states = trajectory(&s, &config);
    for lb in lower_bound_track(&states) {
        assert!((lb.min_one_minus_rho - 0.5).abs() < 1e-14);
    }
    let e = entropy_dissipation_check(&states, false).unwrap();
    assert!(e.rate.iter().all(|r| r.1.abs() < 1e-12));
}

#[test]
fn weak_residual_cases() {
    let config = SolverConfig {
        dt: Some(5e-4),
        t_end: 0.05,
        ..SolverConfig::default()
    };
    let states = trajectory(&smooth(16), &config);
    let g = states[0].grid();
    let one = weak_residual(&states, &RealField::constant(g, 1.0)).unwrap();
    assert!(one.defect.abs() < 1e-10 && one.lhs.abs() < 1e-10);

    let phi = RealField::from_fn(g, |[x, y, th]| x.cos() + (y + th).sin() + 0.5 * (x - 2.0 * th).cos());
    let r = weak_residual(&states, &phi).unwrap();
    assert!(r.relative() <= 1e-5, "relative {}", r.relative());

    // e(θ)-components: the defect of the p-equation shrinks like dt².
    let coarse = trajectory(
        &smooth(16),
        &SolverConfig {
            dt: Some(1e-3),
            ..config
        },
    );
    let cos_theta = RealField::from_fn(g, |x| x[2].cos() * x[0].sin());
    let fine_d = weak_residual(&states, &cos_theta).unwrap().defect.abs();
    let coarse_d = weak_residual(&coarse, &cos_theta).unwrap().defect.abs();
    assert!(coarse_d / fine_d > 3.5, "{coarse_d} / {fine_d}");

    let rough = RealField::from_fn(g, |x| (7.0 * x[0]).cos());
    assert!(weak_residual(&states, &rough).is_err());
}

#[test]
fn entropy_decreases_without_drift() {
    let config = SolverConfig {
        dt: Some(5e-3),
        t_end: 0.5,
        drift: false,
        ..SolverConfig::default()
    };
    let e = entropy_dissipation_check(&trajectory(&smooth(16), &config), false).unwrap();
    assert!(e.violations.is_empty());
    assert!(e.rate.iter().all(|r| r.1 <= ENTROPY_TOLERANCE));
    // With drift on nothing is asserted, only reported.
    let on = SolverConfig { drift: true, ..config };
    let e = entropy_dissipation_check(&trajectory(&smooth(16), &on), true).unwrap();
    assert!(e.violations.is_empty() && e.rate.len() == e.entropy.len());
}

#[test]
fn ledger_of_bounded_run_reaches_zero() {
    let config = SolverConfig {
        dt: Some(5e-3),
        t_end: 0.5,
        ..SolverConfig::default()
    };
    let s = samples(&trajectory(&smooth(16), &config));
    let t0 = 0.4;
    let l = default_ladder_scale(&s, t0).unwrap();
    let ladder = TruncationLadder::new(t0, 20, l).unwrap();
    let ledger = energy_ledger(&s, &ladder, Variant::G).unwrap();
    assert!(ledger.windows(2).all(|w| w[1] <= w[0]));
    assert!(ledger.iter().any(|&v| v == 0.0));
    let report = recursion_decay_check(&ledger).unwrap();
    assert!(report.decays_to_zero);

    // n = 0 is the plain energy of g over [t0/2, T].
    let e0 = ladder_energy(&s, &ladder, 0, Variant::G).unwrap();
    assert_eq!(e0, ledger[0]);
    let window: Vec<(f64, RealField)> = s.iter().filter(|x| x.0 >= t0 / 2.0 - 1e-12).cloned().collect();
    let sup = window
        .iter()
        .map(|(_, f)| spectral::lq_norm(&f.map(|v| (v / l).max(0.0)), 2.0, spectral::Domain::Upsilon).unwrap().powi(2))
        .fold(0.0, f64::max);
    assert!(e0 >= sup);

    // Too few samples in [T_n, T].
    assert!(ladder_energy(&s[..3], &ladder, 0, Variant::G).is_err());
}

#[test]
fn w_ladder_on_density() {
    let config = SolverConfig {
        dt: Some(5e-3),
        t_end: 0.3,
        ..SolverConfig::default()
    };
    let states = trajectory(&smooth(16), &config);
    let v: Vec<(f64, RealField)> = states
        .iter()
        .map(|s| (s.time(), s.moments().one_minus_rho().map(|u| 1.0 / u)))
        .collect();
    let max_v = v.iter().map(|x| x.1.max()).fold(0.0, f64::max);
    // L with max w < κ₁ = ½ empties every truncation from n = 1 on.
    let ladder = TruncationLadder::new(0.2, 8, 2.5 * max_v).unwrap();
    let ledger = energy_ledger(&v, &ladder, Variant::W).unwrap();
    assert!(ledger[0] > 0.0);
    assert!(ledger[1..].iter().all(|&x| x == 0.0));
}

#[test]
fn interpolation_ratio_is_resolution_stable() {
    let ratio = |n: usize| {
        let config = SolverConfig {
            dt: Some(5e-3),
            t_end: 0.2,
            ..SolverConfig::default()
        };
        let window: Vec<(f64, RealField)> = trajectory(&smooth(n), &config)
            .iter()
            .map(|s| (s.time(), s.rho().clone()))
            .collect();
        interpolation_monitor(&window, 2.0, 2.0).unwrap()
    };
    let (a, b) = (ratio(16), ratio(32));
    assert!((a.ratio - b.ratio).abs() <= 0.2 * b.ratio);

    // v ↦ 2v leaves the ratio unchanged.
    let g = TorusGrid::omega(16, 16).unwrap();
    let v = RealField::from_fn(g, |x| 1.0 + 0.3 * x[0].sin());
    let w1: Vec<(f64, RealField)> = (0..5).map(|i| (0.1 * i as f64, v.clone())).collect();
    let w2: Vec<(f64, RealField)> = w1.iter().map(|(t, f)| (*t, f.scale(2.0))).collect();
    let (r1, r2) = (interpolation_monitor(&w1, 2.0, 2.0).unwrap(), interpolation_monitor(&w2, 2.0, 2.0).unwrap());
    assert!((r1.ratio - r2.ratio).abs() < 1e-14 * r1.ratio);
    assert!((r2.lq - 2.0 * r1.lq).abs() < 1e-12 * r2.lq);
}

#[test]
fn norm_report_is_finite() {
    let config = SolverConfig {
        dt: Some(5e-3),
        t_end: 0.1,
        ..SolverConfig::default()
    };
    let states = trajectory(&smooth(16), &config);
    let r = norm_report(&states).unwrap();
    for v in [r.linf_l2_f, r.l2_h1_f, r.h2_rho, r.min_one_minus_rho, r.min_f] {
        assert!(v.is_finite());
    }
    assert!(r.min_f > 0.0 && r.min_one_minus_rho > 0.0);
    let n = state_norms(&states[0]).unwrap();
    assert!((n.entropy.unwrap() - moments::entropy(states[0].f()).unwrap()).abs() == 0.0);
    assert!(n.h1_f > n.l2_f);
}
