//! Acceptance suite at desk scale (32³ unless stated). Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taf_cli::checkpoint::{decode, encode};
use taf_cli::{parse_config, runner, scenarios, ConfigError};
use taf_core::diagnostics::{
    default_ladder_scale, energy_ledger, entropy_dissipation_check, lower_bound_track, recursion_decay_check,
    TruncationLadder, Variant, ENTROPY_TOLERANCE,
};
use taf_core::evolution::{
    self, rhs_f, rhs_p, rhs_rho, rhs_tensor, Form, ModelState, NullSink, SolverConfig, TrajectorySink,
};
use taf_core::heatkernel::{duhamel, loglog_slope, scaling_exponent, PeriodicHeatKernel};
use taf_core::moments::{moment_tensor, trace};
use taf_core::spectral::{self, Domain, Rank, RealField, TorusGrid};
use taf_core::uniqueness::{
    difference_fields, duhamel_reconstruction, gronwall_fit, linfty_l2_ratio, PairedTrajectory, Pattern, Perturbation,
};

const N: usize = 32;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn all(parts: Vec<(bool, String)>) -> Outcome {
    let ok = parts.iter().all(|p| p.0);
    check(ok, parts.into_iter().map(|p| p.1).collect::<Vec<_>>().join("; "))
}

fn cube(n: usize) -> TorusGrid {
    TorusGrid::cube(n).unwrap()
}

/// Random positive state with wavenumbers ≤ 4 per axis and `max ρ ≤ 0.8`.
fn random_state(rng: &mut ChaCha8Rng, g: TorusGrid) -> ModelState {
    let modes: Vec<(f64, f64, f64, f64, f64)> = (0..8)
        .map(|_| {
            (
                rng.gen_range(-4i32..=4) as f64,
                rng.gen_range(-4i32..=4) as f64,
                rng.gen_range(-4i32..=4) as f64,
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let wiggle = RealField::from_fn(g, |x| {
        modes
            .iter()
            .map(|&(a, b, c, amp, ph)| amp * (a * x[0] + b * x[1] + c * x[2] + ph).cos())
            .sum()
    });
    let s = 0.25 / wiggle.max_abs() / (2.0 * PI);
    ModelState::new(wiggle.map(|w| 0.5 / (2.0 * PI) + s * w), 0.0, 0).unwrap()
}

fn rel_max(a: &RealField, b: &RealField) -> f64 {
    a.sub(b).unwrap().max_abs() / b.max_abs().max(f64::MIN_POSITIVE)
}

fn trajectory(s: &ModelState, c: &SolverConfig) -> Vec<ModelState> {
    let mut sink = TrajectorySink::default();
    evolution::run(s, c, &mut sink).unwrap();
    sink.states
}

fn final_f(s: &ModelState, c: &SolverConfig) -> RealField {
    evolution::run(s, c, &mut NullSink).unwrap().final_state.f().clone()
}

fn solver(dt: Option<f64>, t_end: f64) -> SolverConfig {
    SolverConfig {
        dt,
        t_end,
        ..SolverConfig::default()
    }
}

fn c1_spectral() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = cube(N);
    let (mut rt, mut pars, mut canc): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let s = random_state(&mut rng, g);
        let hat = spectral::transform(s.f()).unwrap();
        rt = rt.max(rel_max(&spectral::inverse(&hat), s.f()));
        let l2 = spectral::lq_norm(s.f(), 2.0, Domain::Upsilon).unwrap();
        pars = pars.max((l2 - hat.l2_norm()).abs() / l2);
        let d = rhs_f(&s, Form::Divergence).unwrap();
        let nd = rhs_f(&s, Form::NonDivergence).unwrap();
        let e = spectral::lq_norm(&d.sub(&nd).unwrap(), 2.0, Domain::Upsilon).unwrap();
        canc = canc.max(e / spectral::lq_norm(&d, 2.0, Domain::Upsilon).unwrap());
    }
    all(vec![
        (rt <= 1e-12, format!("round trip {rt:.2e} (≤1e-12)")),
        (pars <= 1e-10, format!("Parseval {pars:.2e} (≤1e-10)")),
        (canc <= 1e-9, format!("div/non-div {canc:.2e} (≤1e-9) over 20 states")),
    ])
}

fn c2_conservation() -> Outcome {
    let s = scenarios::smooth(cube(N)).unwrap();
    let mut sink = TrajectorySink::default();
    let c = SolverConfig {
        cadence: 10,
        ..solver(None, 1.0)
    };
    let summary = evolution::run(&s, &c, &mut sink).unwrap();
    let tr = sink
        .states
        .iter()
        .map(|st| trace(st.moments().pmat()).unwrap().sub(st.rho()).unwrap().max_abs())
        .fold(0.0, f64::max);

    let k = scenarios::constant(cube(N), 0.5).unwrap();
    let mut cur = k.clone();
    let cfg = solver(Some(1e-3), 0.0);
    for _ in 0..1000 {
        cur = evolution::step(&cur, &cfg).unwrap();
    }
    let drift_const = cur.f().sub(k.f()).unwrap().max_abs();
    all(vec![
        (
            summary.max_mass_drift <= 1e-10,
            format!("mass drift {:.2e} over {} steps (≤1e-10)", summary.max_mass_drift, summary.steps),
        ),
        (drift_const <= 1e-12, format!("constant state after 1000 steps {drift_const:.2e} (≤1e-12)")),
        (tr <= 1e-10, format!("|tr P − ρ| {tr:.2e} (≤1e-10)")),
    ])
}

fn c3_commutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut e0, mut e1, mut e2): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..5 {
        let s = random_state(&mut rng, cube(N));
        let fd = rhs_f(&s, Form::Divergence).unwrap();
        e0 = e0.max(rel_max(&moment_tensor(&fd, 0).unwrap(), &rhs_rho(s.moments()).unwrap()));
        e1 = e1.max(rel_max(&moment_tensor(&fd, 1).unwrap(), &rhs_p(&s).unwrap()));
        e2 = e2.max(rel_max(&moment_tensor(&fd, 2).unwrap(), &rhs_tensor(&s, 2).unwrap()));
    }
    all(vec![
        (e0 <= 1e-10, format!("ρ {e0:.2e}")),
        (e1 <= 1e-10, format!("p {e1:.2e}")),
        (e2 <= 1e-10, format!("P {e2:.2e} (each ≤1e-10)")),
    ])
}

fn c4_heat_kernel() -> Outcome {
    let k = PeriodicHeatKernel::default();
    let mass = [0.01, 0.1, 1.0, 2.0]
        .iter()
        .map(|&t| (k.mass(t, 256).unwrap() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut duality: f64 = 0.0;
    for i in 0..=20 {
        let t = 0.05 * 40f64.powf(i as f64 / 20.0);
        for x in [[0.0, 0.0], [0.3, -1.2], [PI, PI], [2.5, 5.9]] {
            duality = duality.max((k.phi_lattice(t, x).unwrap() - k.phi_series(t, x).unwrap()).abs());
        }
    }
    let mut parts = vec![
        (mass <= 1e-10, format!("mass {mass:.2e} (≤1e-10)")),
        (duality <= 1e-10, format!("duality {duality:.2e} (≤1e-10)")),
    ];
    for q in [1.0, 1.1, 1.2] {
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|i| {
                let t = 0.005 * 10f64.powf(i as f64 / 7.0);
                (t, k.grad_lq_spacetime_norm(q, t).unwrap())
            })
            .collect();
        let (slope, expect) = (loglog_slope(&pts), scaling_exponent(q));
        let err = (slope - expect).abs() / expect;
        parts.push((err <= 0.05, format!("q={q} slope {slope:.4} vs {expect:.4}")));
    }
    all(parts)
}

fn c5_duhamel() -> Outcome {
    let g = TorusGrid::omega(N, N).unwrap();
    let sin_x = RealField::from_fn(g, |x| x[0].sin());
    let gfield = RealField::from_components(Rank::VECTOR, vec![sin_x, RealField::zeros(g, Rank::SCALAR)]).unwrap();
    let mut mode_err: f64 = 0.0;
    for t in [0.05, 0.5, 1.0] {
        let series = vec![(0.0, gfield.clone()), (t, gfield.clone())];
        let rho = duhamel(&series, t, 2000).unwrap();
        let exact = RealField::from_fn(g, |x| -(1.0 - (-t).exp()) * x[0].cos());
        mode_err = mode_err.max(rho.sub(&exact).unwrap().max_abs());
    }
    let base = scenarios::smooth(cube(N)).unwrap();
    let pair = PairedTrajectory::run(
        &base,
        Perturbation::new(1e-3, Pattern::CosXCosTheta),
        &solver(Some(1e-3), 0.05),
    )
    .unwrap();
    let r = duhamel_reconstruction(&pair, 0.05, 2000).unwrap();
    all(vec![
        (mode_err <= 1e-6, format!("mode solution {mode_err:.2e} (≤1e-6)")),
        (
            r.relative_defect() <= 5e-3,
            format!("pair reconstruction at t=0.05 {:.2e} (≤5e-3 relative)", r.relative_defect()),
        ),
    ])
}

fn c6_parabolicity() -> Outcome {
    let nd = scenarios::near_degenerate(cube(N)).unwrap();
    let rho0 = nd.rho().max();
    let states = trajectory(&nd, &solver(None, 1.0));
    let floor = lower_bound_track(&states)
        .iter()
        .map(|l| l.min_one_minus_rho)
        .fold(f64::INFINITY, f64::min);

    let heat = scenarios::pure_heat(cube(N)).unwrap();
    let c = SolverConfig {
        drift: false,
        cross_diffusion: false,
        ..solver(Some(5e-3), 1.0)
    };
    let g = heat.rho().grid();
    let err = trajectory(&heat, &c)
        .iter()
        .map(|s| {
            let t = s.time();
            let exact = RealField::from_fn(g, |x| 0.5 + 0.4 * (-t).exp() * x[0].cos());
            s.rho().sub(&exact).unwrap().max_abs()
        })
        .fold(0.0, f64::max);
    all(vec![
        (
            floor > 0.0 && (rho0 - 0.95).abs() < 1e-9,
            format!("max ρ₀ {rho0:.3}, min(1−ρ) over {} samples {floor:.4} (>0)", states.len()),
        ),
        (err <= 1e-6, format!("pure heat vs e^(−t) {err:.2e} (≤1e-6)")),
    ])
}

fn c7_ledger() -> Outcome {
    let s = scenarios::smooth(cube(N)).unwrap();
    let c = SolverConfig {
        cadence: 4,
        ..solver(None, 1.0)
    };
    let samples: Vec<(f64, RealField)> = trajectory(&s, &c).iter().map(|s| (s.time(), s.f().clone())).collect();
    let t0 = 0.8;
    let l = default_ladder_scale(&samples, t0).unwrap();
    let ladder = TruncationLadder::new(t0, 20, l).unwrap();
    let ledger = energy_ledger(&samples, &ladder, Variant::G).unwrap();
    let monotone = ledger.windows(2).all(|w| w[1] <= w[0]);
    let zero_at = ledger.iter().position(|&v| v == 0.0);

    let double: Vec<f64> = (0..8).map(|n| 4f64.powf(-(2f64.powi(n)))).collect();
    let mut three_halves = vec![1e-3];
    for n in 1..8 {
        let prev: f64 = three_halves[n - 1];
        three_halves.push(2f64.powi(n as i32) * prev.powf(1.5));
    }
    let b2 = recursion_decay_check(&double).unwrap().exponent.unwrap_or(f64::NAN);
    let b15 = recursion_decay_check(&three_halves).unwrap().exponent.unwrap_or(f64::NAN);
    all(vec![
        (
            ledger[0] > 0.0 && monotone && zero_at.is_some_and(|n| n <= 20),
            format!("L = {l:.3}, G_0 = {:.3e}, non-increasing, first zero at n = {zero_at:?} (≤20)", ledger[0]),
        ),
        ((b2 - 2.0).abs() <= 0.2, format!("fit β {b2:.4} vs 2")),
        ((b15 - 1.5).abs() <= 0.15, format!("fit β {b15:.4} vs 1.5 (10%)")),
    ])
}

fn c8_entropy() -> Outcome {
    let s = scenarios::smooth(cube(N)).unwrap();
    let c = SolverConfig {
        drift: false,
        ..solver(Some(5e-3), 1.0)
    };
    let states = trajectory(&s, &c);
    let min_f = states.iter().map(|s| s.f().min()).fold(f64::INFINITY, f64::min);
    let report = entropy_dissipation_check(&states, false).unwrap();
    let worst = report.rate.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    check(
        report.violations.is_empty() && worst <= ENTROPY_TOLERANCE && min_f > 0.0,
        format!("max dE/dt {worst:.3e} over {} samples (≤1e-8), min f {min_f:.3e}", report.rate.len()),
    )
}

fn c9_uniqueness() -> Outcome {
    let base = scenarios::smooth(cube(N)).unwrap();
    let same = PairedTrajectory::run(&base, Perturbation::none(), &solver(Some(1e-3), 0.1)).unwrap();
    let identical = same
        .times()
        .iter()
        .map(|&t| difference_fields(&same, t).unwrap().f_bar.max_abs())
        .fold(0.0, f64::max);

    let long = SolverConfig {
        cadence: 5,
        ..solver(Some(1e-3), 0.5)
    };
    let mut fits = Vec::new();
    let mut ratios = Vec::new();
    for delta in [1e-2, 1e-4] {
        let pair = PairedTrajectory::run(&base, Perturbation::new(delta, Pattern::CosXCosTheta), &long).unwrap();
        fits.push(gronwall_fit(&pair, 0.5, 0.05).unwrap());
        ratios.push((delta, linfty_l2_ratio(&pair, 0.05).unwrap().value));
    }
    let mid = PairedTrajectory::run(&base, Perturbation::new(1e-3, Pattern::CosXCosTheta), &solver(Some(1e-3), 0.05)).unwrap();
    ratios.insert(1, (1e-3, linfty_l2_ratio(&mid, 0.05).unwrap().value));

    let envelope = fits.iter().all(|f| f.envelope_holds);
    let worst = fits.iter().map(|f| f.worst_ratio).fold(0.0, f64::max);
    let (c_a, c_b) = (fits[0].c_hat.unwrap_or(f64::NAN), fits[1].c_hat.unwrap_or(f64::NAN));
    let c_spread = (c_a - c_b).abs() / c_b.abs();
    let rs: Vec<f64> = ratios.iter().map(|r| r.1.unwrap_or(f64::NAN)).collect();
    let r_ref = rs[2];
    let r_spread = rs.iter().map(|r| (r - r_ref).abs() / r_ref).fold(0.0, f64::max);
    all(vec![
        (identical <= 1e-12, format!("identical runs |f̄| {identical:.1e} (≤1e-12)")),
        (envelope, format!("Grönwall worst ratio {worst:.4} (≤1.05)")),
        (c_spread <= 0.1, format!("Ĉ {c_a:.4}/{c_b:.4} spread {c_spread:.1e} (≤10%)")),
        (
            r_spread <= 0.1 && rs.iter().all(|r| r.is_finite()),
            format!("ratio at t=0.05 {:.4}/{:.4}/{:.4} spread {r_spread:.1e} (≤10%)", rs[0], rs[1], rs[2]),
        ),
    ])
}

fn c10_convergence() -> Outcome {
    let fine = cube(64);
    let c = solver(Some(1e-3), 0.1);
    let f: Vec<RealField> = [16, 32, 64]
        .iter()
        .map(|&n| spectral::resample(&final_f(&scenarios::smooth(cube(n)).unwrap(), &c), fine).unwrap())
        .collect();
    let l2 = |a: &RealField, b: &RealField| spectral::lq_norm(&a.sub(b).unwrap(), 2.0, Domain::Upsilon).unwrap();
    let (e16, e32) = (l2(&f[0], &f[1]), l2(&f[1], &f[2]));
    let space = e16 / e32;

    let s = scenarios::smooth(cube(N)).unwrap();
    let ft: Vec<RealField> = [4e-3, 2e-3, 1e-3].iter().map(|&dt| final_f(&s, &solver(Some(dt), 0.1))).collect();
    let time = l2(&ft[0], &ft[1]) / l2(&ft[1], &ft[2]);
    all(vec![
        (space >= 10.0, format!("‖f16−f32‖/‖f32−f64‖ = {e16:.2e}/{e32:.2e} = {space:.2e} (≥10)")),
        (time >= 3.5, format!("dt halving ratio {time:.3} (≥3.5)")),
    ])
}

fn c11_plumbing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = random_state(&mut rng, cube(N));
    let bytes = encode(&s);
    let back = decode(&bytes).unwrap();
    let exact = back.f().values().iter().zip(s.f().values()).all(|(a, b)| a.to_bits() == b.to_bits())
        && encode(&back) == bytes;

    let cfg = parse_config("[grid]\nnx = 16\n[solver]\nt_end = 0.05\ncadence = 2\n[scenario]\nname = noise\nseed = 5\n").unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (runner::run_scenario(&cfg, a.path()).unwrap(), runner::run_scenario(&cfg, b.path()).unwrap());
    let csv_a = std::fs::read(ra.dir.join("diagnostics.csv")).unwrap();
    let same = csv_a == std::fs::read(rb.dir.join("diagnostics.csv")).unwrap() && csv_a.len() > 100;

    let rejected = match parse_config("[scenario]\nname = smooth\n[barrier]\nfamily = power\nq = -1\n") {
        Err(e @ ConfigError::Barrier(_)) => e.to_string().contains("h' < 0 < h''"),
        _ => false,
    };
    all(vec![
        (exact, format!("checkpoint round trip bit-exact: {exact}")),
        (same, format!("rerun diagnostics byte-identical: {same}")),
        (rejected, format!("h' > 0 rejected with the barrier rule: {rejected}")),
    ])
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("spectral identities", c1_spectral),
        ("conservation and bounds", c2_conservation),
        ("moment-equation commutation", c3_commutation),
        ("heat kernel", c4_heat_kernel),
        ("Duhamel oracle", c5_duhamel),
        ("strong parabolicity", c6_parabolicity),
        ("truncation-energy ledger", c7_ledger),
        ("entropy dissipation", c8_entropy),
        ("uniqueness harness", c9_uniqueness),
        ("convergence", c10_convergence),
        ("plumbing", c11_plumbing),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS [{:>2}] {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {d} [{secs:.1}s]", i + 1)
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
