//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting, so `cargo test --test acceptance -- --nocapture`
//! gives a one-line-per-criterion report.
//!
//! Criteria 3, 4 and 6 share one euler_friction scan, computed once.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use charblow::characteristics::{self, Direction};
use charblow::coefficients::{self, coefficient_set, model_bounds, DEFAULT_SAMPLES};
use charblow::evolve::{self, GridConfig, RunOptions, Trajectory};
use charblow::initialdata::{standard_bump, InitialDataSpec};
use charblow::lifespan::{
    self, constant_chain, riccati_lifespan, scan_csv, scaling_scan, ConstantChain, FitOptions, ScanConfig,
    ScanResult,
};
use charblow::model::{builtin_model, resolve_model, REGISTRY};
use charblow::sampling::ball_points;
use charblow::spectral::{eigenframe, frame_derivatives};
use charblow::SystemModel;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};

fn report(criterion: u32, ok: bool, detail: &str) {
    println!("{} criterion {criterion}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn model(name: &str) -> SystemModel {
    builtin_model(name, &BTreeMap::new()).unwrap()
}

fn chain_for(m: &SystemModel) -> ConstantChain {
    let b = model_bounds(m, DEFAULT_SAMPLES).unwrap();
    constant_chain(&b, &standard_bump()).unwrap()
}

// 1. Algebraic identities.

const IDENTITY_SAMPLES: usize = 1000;
const IDENTITY_PROBES: usize = 100;

#[derive(Default)]
struct IdentityWorst {
    gamma_asym: f64,
    gamma_jj: f64,
    big_gamma_jj: f64,
    quadratic: f64,
    source: f64,
}

fn identity_residuals(m: &SystemModel, seed: u64) -> IdentityWorst {
    let n = m.dim();
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut worst = IdentityWorst::default();
    for u in ball_points(n, m.delta(), IDENTITY_SAMPLES, 1) {
        let frame = eigenframe(m, u.as_slice()).unwrap();
        let derivs = frame_derivatives(m, u.as_slice(), m.fd_step()).unwrap();
        let set = coefficient_set(m, u.as_slice()).unwrap();
        // <Dλ_i, r_k> from the frame derivatives, independent of c and γ.
        let dl = |i: usize, kk: usize| derivs.dlambda_along(i, frame.right.column(kk).as_slice());
        for i in 0..n {
            for j in 0..n {
                for kk in 0..n {
                    worst.gamma_asym = worst.gamma_asym.max((set.gamma.get(i, j, kk) - set.gamma.get(i, kk, j)).abs());
                }
                let delta = if i == j { dl(i, i) } else { 0.0 };
                worst.gamma_jj = worst.gamma_jj.max((set.gamma.get(i, j, j) + delta).abs());
                worst.big_gamma_jj = worst.big_gamma_jj.max(set.big_gamma.get(i, j, j).abs());
            }
        }
        let g = m.source_vector(u.as_slice());
        let dg = m.source_jacobian(u.as_slice()).unwrap();
        let c = coefficients::c_from_frame(m, &frame).unwrap();
        for _ in 0..IDENTITY_PROBES {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            for i in 0..n {
                // Σ γ_ijk w_j w_k + Σ_k w_i w_k <Dλ_i, r_k> = Σ Γ_ijk w_j w_k
                let lhs = set.gamma.quadratic_form(i, &w) + (0..n).map(|kk| w[i] * w[kk] * dl(i, kk)).sum::<f64>();
                let rhs = set.big_gamma.quadratic_form(i, &w);
                worst.quadratic = worst.quadratic.max((lhs - rhs).abs());
                // Σ_k G_ik w_k = Σ_k l_i Dg r_k w_k
                //   + Σ_{j≠i,k} c_ijk (l_k g)(<l_j, l_i> w_i − w_j) / (λ_j − λ_i)
                let wv = DVector::from_vec(w.clone());
                let mut direct = (frame.left.row(i) * &dg * &frame.right * &wv)[(0, 0)];
                let lg = &frame.left * &g;
                for j in (0..n).filter(|&j| j != i) {
                    let gram = frame.left.row(j).dot(&frame.left.row(i));
                    for kk in 0..n {
                        direct += c.get(i, j, kk) * lg[kk] * (gram * w[i] - w[j]) / (frame.lambdas[j] - frame.lambdas[i]);
                    }
                }
                let assembled = (set.g.row(i) * &wv)[(0, 0)];
                worst.source = worst.source.max((direct - assembled).abs());
            }
        }
    }
    worst
}

#[test]
fn criterion_1_algebraic_identities() {
    let mut ok = true;
    let mut lines = Vec::new();
    for (s, name) in REGISTRY.iter().enumerate() {
        let w = identity_residuals(&model(name), s as u64);
        let this = w.gamma_asym == 0.0
            && w.gamma_jj < 1e-7
            && w.big_gamma_jj < 1e-7
            && w.quadratic < 1e-9
            && w.source < 1e-9;
        ok &= this;
        lines.push(format!(
            "{name}: asym {:.1e}, gamma_jj {:.1e}, Gamma_jj {:.1e}, quadratic {:.1e}, source {:.1e}",
            w.gamma_asym, w.gamma_jj, w.big_gamma_jj, w.quadratic, w.source
        ));
    }
    report(1, ok, &format!("identity residuals over {IDENTITY_SAMPLES} states per model; {}", lines.join("; ")));
    assert!(ok);
}

// 2. Scalar oracle reproduction.

fn scalar_run(m: &SystemModel, data: &InitialDataSpec, n: usize, t_end: f64) -> Trajectory {
    let mut g = GridConfig::new(n, -0.6, 0.6);
    g.cfl = 0.9;
    let opts = RunOptions::new(t_end, data.source_scale());
    evolve::simulate_with(m, data, &g, &opts).unwrap()
}

#[test]
fn criterion_2_scalar_oracles() {
    let bump = standard_bump();
    let eps = 0.05;
    let exact = 1.0 / (eps * bump.max_dalpha);

    let burgers = model("burgers");
    let data = InitialDataSpec::for_model(&burgers, eps, Some(0.0), false, bump).unwrap();
    let run = scalar_run(&burgers, &data, 8192, 1.5 * exact);
    let est = lifespan::estimate_from_runs(&[&run], &FitOptions::default(), 1.0).unwrap();
    let t1 = est.t_star.unwrap();
    let e1 = (t1 - exact).abs() / exact;
    let cone1 = evolve::support_bounds(&run, 1e-5 * eps).iter().filter(|b| b.violation).count();

    // Effective damping ε κ β with κ = 1.
    let beta_eff = 0.5 * eps * bump.max_dalpha;
    let damped = builtin_model("burgers_damped", &[("beta".to_string(), beta_eff / eps)].into()).unwrap();
    let data = InitialDataSpec::for_model(&damped, eps, Some(1.0), false, bump).unwrap();
    // Slope along the steepest characteristic obeys v' = −v² − β v with
    // v(0) = −ε max α'.
    let w0 = -eps * bump.max_dalpha;
    let exact_damped = -(1.0 / beta_eff) * (1.0 + beta_eff / w0).ln();
    let run = scalar_run(&damped, &data, 8192, 1.5 * exact_damped);
    let est = lifespan::estimate_from_runs(&[&run], &FitOptions::default(), 1.0).unwrap();
    let t2 = est.t_star.unwrap();
    let e2 = (t2 - exact_damped).abs() / exact_damped;
    let cone2 = evolve::support_bounds(&run, 1e-5 * eps).iter().filter(|b| b.violation).count();

    let ok = e1 < 0.02 && e2 < 0.03 && cone1 == 0 && cone2 == 0;
    report(
        2,
        ok,
        &format!(
            "burgers t* {t1:.5} vs exact {exact:.5} (rel {e1:.2e} < 2e-2); damped t* {t2:.5} vs {exact_damped:.5} (rel {e2:.2e} < 3e-2); cone violations {cone1}, {cone2}"
        ),
    );
    assert!(ok);
}

// 3, 4, 6. The euler_friction scan.

fn euler_scan() -> &'static (ScanResult, ConstantChain) {
    static SCAN: OnceLock<(ScanResult, ConstantChain)> = OnceLock::new();
    SCAN.get_or_init(|| {
        let m = model("euler_friction");
        let chain = chain_for(&m);
        let res = scaling_scan(&m, &chain, &standard_bump(), &ScanConfig::default()).unwrap();
        (res, chain)
    })
}

#[test]
fn criterion_3_lifespan_scaling() {
    let (res, _) = euler_scan();
    let slope = res.summary.slopes[0].t_star.unwrap_or(f64::NAN);
    let below: Vec<String> = res
        .rows
        .iter()
        .map(|r| format!("eps {}: t* {:.4} < T_eps {:.4}", r.eps, r.t_star.unwrap_or(f64::NAN), r.t_bound))
        .collect();
    let all_below = res.rows.iter().all(|r| r.error.is_none() && r.t_star.is_some_and(|t| t < r.t_bound));
    let ok = (slope + 1.0).abs() <= 0.1 && all_below;
    report(3, ok, &format!("slope {slope:.4} (target -1 +- 0.1); {}", below.join(", ")));
    assert!(ok);
}

#[test]
fn criterion_4_lemma3_scaling() {
    let (res, _) = euler_scan();
    let s = &res.summary.slopes[0];
    let (j, m, v) = (s.j.unwrap_or(f64::NAN), s.m.unwrap_or(f64::NAN), s.v.unwrap_or(f64::NAN));
    let ok = (j - 1.0).abs() <= 0.1 && (m - 1.0).abs() <= 0.1 && (v - 2.0).abs() <= 0.3;
    report(4, ok, &format!("slopes J {j:.4}, M {m:.4} (target 1 +- 0.1), V {v:.4} (target 2 +- 0.3)"));
    assert!(ok);
}

/// Burgers runs from criterion 2 are checked there; this covers the scan.
#[test]
fn criterion_6_support_cone() {
    let (res, _) = euler_scan();
    let counts: Vec<usize> = res.rows.iter().map(|r| r.cone_violations).collect();
    let ok = counts.iter().all(|&c| c == 0);
    report(6, ok, &format!("cone violations per scan row {counts:?} (margin 6 dx)"));
    assert!(ok);
}

// 5. Riccati comparison.

#[test]
fn criterion_5_riccati_comparison() {
    let euler = model("euler_friction");
    let chain = chain_for(&euler);
    let mut worst = 0.0f64;
    for a in 0..10 {
        for b in 0..10 {
            let eps = 0.01 + 0.1 * a as f64;
            let kappa = 0.01 + 0.11 * b as f64;
            let r = riccati_lifespan(chain.riccati(eps, kappa)).unwrap();
            if let (Some(c), Some(n)) = (r.t_max, r.numeric) {
                worst = worst.max((c - n).abs() / c);
            } else {
                assert_eq!(r.t_max.is_some(), r.numeric.is_some());
            }
        }
    }

    // An admissible run: damped Burgers with ε = κ below its ν.
    let damped = builtin_model("burgers_damped", &BTreeMap::new()).unwrap();
    let dchain = chain_for(&damped);
    let e = 0.9 * dchain.nu;
    let data = InitialDataSpec::for_model(&damped, e, Some(e), false, standard_bump()).unwrap();
    let params = dchain.riccati(e, e);
    let y_blow = riccati_lifespan(params).unwrap().t_max.unwrap();
    let mut g = GridConfig::new(2048, -0.6, 0.6);
    g.cfl = 0.9;
    let run = evolve::simulate_with(&damped, &data, &g, &RunOptions::new(y_blow, data.source_scale())).unwrap();
    let (ts, ws) = run.peak_series();
    let ordering = ts.iter().zip(&ws).all(|(t, w)| {
        let y = params.solution(*t);
        !y.is_finite() || *w >= y * (1.0 - 1e-3)
    });

    // T_max < T_eps on ε, κ ≤ ν for both chains.
    let mut bound_ok = true;
    for ch in [&chain, &dchain] {
        for a in 1..=10 {
            for b in 1..=10 {
                let (eps, kappa) = (ch.nu * a as f64 / 10.0, ch.nu * b as f64 / 10.0);
                let t = riccati_lifespan(ch.riccati(eps, kappa)).unwrap().t_max;
                bound_ok &= t.is_some_and(|t| t < ch.t_eps(eps));
            }
        }
    }
    let ok = worst < 1e-6 && ordering && bound_ok;
    report(
        5,
        ok,
        &format!(
            "closed form vs ODE worst rel {worst:.1e} (< 1e-6) on 10x10; W >= y on admissible damped Burgers run (eps = kappa = {e:.4}): {ordering}; T_max < T_eps for eps, kappa <= nu: {bound_ok}"
        ),
    );
    assert!(ok);
}

// 7. Scheme convergence and trace round trip.

fn transport_error(n: usize) -> f64 {
    let m = resolve_model("test:transport", &BTreeMap::new()).unwrap();
    let data = InitialDataSpec::for_model(&m, 0.4, None, false, standard_bump()).unwrap();
    let mut g = GridConfig::new(n, -0.6, 0.6);
    g.cfl = 0.5;
    let t_end = 0.5;
    let run = evolve::simulate_with(&m, &data, &g, &RunOptions::new(t_end, 0.0)).unwrap();
    let s = run.snapshots.last().unwrap();
    assert!((s.t - t_end).abs() < 1e-12);
    let speed = m.params()["speed"];
    (0..s.len())
        .map(|j| {
            let exact = data.evaluate(s.x(j) - speed * t_end).unwrap()[0];
            (s.state(j)[0] - exact).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_7_convergence_and_tracing() {
    let ns = [400usize, 800, 1600, 3200];
    let errs: Vec<f64> = ns.iter().map(|&n| transport_error(n)).collect();
    let x: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    let order = lifespan::log_log_slope(&x, &errs).unwrap();
    let pairwise: Vec<String> = errs.windows(2).map(|e| format!("{:.2}", (e[0] / e[1]).log2())).collect();

    let m = model("euler_friction");
    let data = InitialDataSpec::for_model(&m, 0.1, Some(0.1), false, standard_bump()).unwrap();
    let mut g = GridConfig::new(1024, -0.6, 0.6);
    g.cfl = 0.9;
    let mut opts = RunOptions::new(1.2, data.source_scale());
    opts.snap_every = 1.2 / 1000.0;
    let run = evolve::simulate_with(&m, &data, &g, &opts).unwrap();
    let p = m.gnl_index();
    let fwd = characteristics::trace(&m, &run, p, 0.0, -0.25, Direction::Forward).unwrap();
    let (t1, x1) = fwd.end();
    let back = characteristics::trace(&m, &run, p, t1, x1, Direction::Backward).unwrap();
    let (t0, x0) = back.end();
    let round_trip = (x0 + 0.25).abs();
    let ok = (3.5..=4.5).contains(&order) && round_trip < 1e-6 && t0 == 0.0 && !fwd.truncated && !back.truncated;
    report(
        7,
        ok,
        &format!(
            "transport order {order:.3} (pairwise {}) in [3.5, 4.5]; trace round trip {round_trip:.1e} < 1e-6 over t in [0, {t1:.3}]",
            pairwise.join(", ")
        ),
    );
    assert!(ok);
}

// 8. Determinism.

fn small_scan() -> (String, String) {
    let m = model("euler_friction");
    let chain = chain_for(&m);
    let cfg = ScanConfig {
        eps: vec![0.05, 0.1],
        cells: vec![256, 512],
        ..ScanConfig::default()
    };
    let res = scaling_scan(&m, &chain, &standard_bump(), &cfg).unwrap();
    (scan_csv(&res.rows).unwrap(), serde_json::to_string_pretty(&res).unwrap())
}

#[test]
fn criterion_8_determinism() {
    let (csv_a, json_a) = small_scan();
    let (csv_b, json_b) = small_scan();
    let ok = csv_a == csv_b && json_a == json_b;
    report(
        8,
        ok,
        &format!("two identical scans: CSV {} bytes identical {}, JSON {} bytes identical {}", csv_a.len(), csv_a == csv_b, json_a.len(), json_a == json_b),
    );
    assert!(ok);
}
