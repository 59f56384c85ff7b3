use std::f64::consts::PI;

use taf_core::evolution::{self, ModelState, RunEvent, SolverConfig, TrajectorySink};
use taf_core::{Error, TorusGrid};

#[test]
fn overfull_density_aborts_with_last_good_state() {
    let g = TorusGrid::cube(8).unwrap();
    let s = ModelState::band_limited(g, |[x, _, _]| (0.9 + 0.2 * x.cos()) / (2.0 * PI)).unwrap();
    let mut sink = TrajectorySink::default();
    let config = SolverConfig {
        dt: Some(1e-3),
        t_end: 0.1,
        ..SolverConfig::default()
    };
    match evolution::run(&s, &config, &mut sink) {
        Err(Error::Abort { step, last_good, .. }) => {
            assert_eq!(step, 1);
            assert_eq!(last_good.step(), 0);
            assert_eq!(last_good.f(), s.f());
        }
        other => panic!("expected abort, got {other:?}"),
    }
    assert!(matches!(sink.events.last(), Some(RunEvent::Aborted { step: 1, .. })));

    // The same data evolves under the linear heat reduction, where ρ is not an occupancy.
    let heat = SolverConfig {
        drift: false,
        cross_diffusion: false,
        ..config
    };
    assert!(evolution::run(&s, &heat, &mut TrajectorySink::default()).is_ok());
}

#[test]
fn uniform_step_lands_on_end_time() {
    let g = TorusGrid::cube(8).unwrap();
    let s = ModelState::band_limited(g, |_| 0.3 / (2.0 * PI)).unwrap();
    let config = SolverConfig {
        dt: Some(0.03),
        t_end: 0.1,
        cadence: 2,
        ..SolverConfig::default()
    };
    let mut sink = TrajectorySink::default();
    let out = evolution::run(&s, &config, &mut sink).unwrap();
    assert_eq!(out.steps, 4);
    assert!((out.dt - 0.025).abs() < 1e-15);
    assert_eq!(out.final_state.time(), 0.1);
    let times: Vec<f64> = sink.states.iter().map(|s| s.time()).collect();
    assert_eq!(times.len(), 3);
    assert!((times[1] - 0.05).abs() < 1e-15);
    assert!(matches!(sink.events.first(), Some(RunEvent::Started { steps: 4, .. })));

    let too_big = SolverConfig {
        dt: Some(1.0),
        ..config
    };
    assert!(matches!(evolution::run(&s, &too_big, &mut sink), Err(Error::Parameter(_))));
}
