//! Characteristic tracing and the running suprema on scalar problems with
//! exact solutions.

use std::collections::BTreeMap;

use charblow::characteristics::{self, Direction};
use charblow::evolve::{self, GridConfig, RunOptions, Trajectory};
use charblow::initialdata::{standard_bump, InitialDataSpec};
use charblow::model::{builtin_model, resolve_model};
use charblow::{Error, SystemModel};

fn burgers_run(snapshots: usize) -> (SystemModel, InitialDataSpec, Trajectory) {
    let m = builtin_model("burgers", &BTreeMap::new()).unwrap();
    let data = InitialDataSpec::for_model(&m, 0.1, Some(0.0), false, standard_bump()).unwrap();
    let mut g = GridConfig::new(1024, -0.6, 0.6);
    g.cfl = 0.9;
    let mut opts = RunOptions::new(1.8, 0.0);
    opts.snap_every = 1.8 / snapshots as f64;
    let traj = evolve::simulate_with(&m, &data, &g, &opts).unwrap();
    (m, data, traj)
}

#[test]
fn burgers_characteristics_are_straight_lines() {
    let (m, data, traj) = burgers_run(400);
    for x0 in [-0.3, -0.1, 0.2] {
        let tr = characteristics::trace(&m, &traj, 0, 0.0, x0, Direction::Forward).unwrap();
        let u0 = data.evaluate(x0).unwrap()[0];
        for &(t, x) in &tr.path {
            assert!((x - (x0 + u0 * t)).abs() < 1e-6, "x0={x0} t={t}: {x} vs {}", x0 + u0 * t);
        }
        assert!(characteristics::path_defect(&m, &tr, 1).unwrap() < 1e-4);
    }
}

#[test]
fn sparse_snapshots_are_refused() {
    let (m, _, traj) = burgers_run(4);
    match characteristics::trace(&m, &traj, 0, 0.0, 0.0, Direction::Forward) {
        Err(Error::Config(msg)) => assert!(msg.contains("snapshots")),
        other => panic!("expected a refusal, got {other:?}"),
    }
}

#[test]
fn transport_residual_is_small_before_steepening() {
    let (m, _, traj) = burgers_run(400);
    let tr = characteristics::trace(&m, &traj, 0, 0.0, -0.2, Direction::Forward).unwrap();
    let res = characteristics::transport_residual(&m, &tr, 0.0).unwrap();
    let early: f64 = res.iter().filter(|(t, _)| *t < 1.0).map(|(_, r)| *r).fold(0.0, f64::max);
    assert!(early < 1e-4, "{early}");
}

#[test]
fn scalar_suprema() {
    let (m, data, traj) = burgers_run(100);
    let rep = characteristics::lemma3_quantities(&m, &traj, None).unwrap();
    // No other families, and w vanishes off the strip.
    assert!(rep.v_tilde.iter().all(|v| *v == 0.0));
    assert!(rep.max_v() < 1e-8, "{}", rep.max_v());
    // J(0) is the total variation of the data. The strip has width 1 and
    // the edges move with speed u = 0.
    assert!((rep.j[0] - data.epsilon * standard_bump().total_variation()).abs() < 1e-4);
    assert!(rep.s.iter().all(|s| (s - 1.0).abs() < 1e-9));
    // Running suprema never decrease.
    for w in rep.j.windows(2).chain(rep.m.windows(2)) {
        assert!(w[1] >= w[0]);
    }
}

#[test]
fn constant_transport_support_stays_in_the_cone() {
    let m = resolve_model("test:transport", &BTreeMap::new()).unwrap();
    let data = InitialDataSpec::for_model(&m, 0.4, None, false, standard_bump()).unwrap();
    let g = GridConfig::new(512, -0.6, 0.6);
    let traj = evolve::simulate_with(&m, &data, &g, &RunOptions::new(1.0, 0.0)).unwrap();
    let bounds = evolve::support_bounds(&traj, 1e-5 * data.epsilon);
    assert!(bounds.iter().all(|b| !b.violation));
    let last = bounds.last().unwrap();
    assert!((last.t - 1.0).abs() < 1e-12);
    assert!(last.lo.unwrap() >= 0.5 - last.margin && last.hi.unwrap() <= 1.5 + last.margin);
    // A threshold above the data gives an empty support.
    let none = evolve::support_bounds(&traj, 1.0);
    assert!(none.iter().all(|b| b.lo.is_none() && b.hi.is_none() && !b.violation));
}
