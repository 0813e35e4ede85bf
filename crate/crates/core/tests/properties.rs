//! Property tests for invariants that hold for every admissible input.

use std::collections::BTreeMap;

use charblow::coefficients::coefficient_set;
use charblow::initialdata::{standard_bump, BumpProfile};
use charblow::lifespan::{inverse_fit, log_log_slope, FitOptions, RiccatiParams};
use charblow::model::{builtin_model, REGISTRY};
use charblow::spectral::eigenframe;
use charblow::SystemModel;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn registry_model(k: usize) -> SystemModel {
    builtin_model(REGISTRY[k % REGISTRY.len()], &BTreeMap::new()).unwrap()
}

/// Maps a point of the unit cube into the ball of radius `0.95 δ`.
fn into_ball(m: &SystemModel, raw: &[f64]) -> Vec<f64> {
    let v = DVector::from_column_slice(&raw[..m.dim()]);
    let norm = v.norm();
    let scale = if norm > 1.0 { 1.0 / norm } else { 1.0 };
    (v * scale * 0.95 * m.delta()).iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn left_and_right_frames_are_dual(k in 0usize..4, raw in prop::collection::vec(-1.0f64..1.0, 3)) {
        let m = registry_model(k);
        let u = into_ball(&m, &raw);
        let f = eigenframe(&m, &u).unwrap();
        let id = &f.left * &f.right;
        let err = (id - DMatrix::identity(m.dim(), m.dim())).amax();
        prop_assert!(err < 1e-12, "L R - I = {err}");
        // Eigenvalues come out sorted and the right vectors are eigenvectors.
        let a = m.flux_matrix(&u);
        for i in 0..m.dim() {
            let r = f.right.column(i);
            prop_assert!((&a * r - r * f.lambdas[i]).amax() < 1e-12);
            if i > 0 {
                prop_assert!(f.lambdas[i] > f.lambdas[i - 1]);
            }
        }
    }

    #[test]
    fn gamma_is_symmetric_in_last_two_indices(k in 0usize..4, raw in prop::collection::vec(-1.0f64..1.0, 3)) {
        let m = registry_model(k);
        let u = into_ball(&m, &raw);
        let set = coefficient_set(&m, &u).unwrap();
        let n = m.dim();
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    prop_assert_eq!(set.gamma.get(i, j, l), set.gamma.get(i, l, j));
                    prop_assert_eq!(set.big_gamma.get(i, j, l), set.big_gamma.get(i, l, j));
                }
            }
        }
    }

    #[test]
    fn riccati_solution_solves_the_ode(a in 0.01f64..2.0, b in 0.0f64..0.5, y0 in 0.01f64..2.0) {
        let p = RiccatiParams { a_coef: a, b_coef: b, y0 };
        prop_assert!((p.solution(0.0) - y0).abs() < 1e-12 * y0);
        let horizon = match p.closed_form().unwrap() {
            Some(t) => {
                // y ~ 1/(a (T - t)) near the blowup time.
                let near = t * (1.0 - 1e-9);
                prop_assert!(p.solution(near) > 1e6 * y0);
                0.9 * t
            }
            None => 10.0,
        };
        for k in 1..10 {
            let t = horizon * k as f64 / 10.0;
            let h = 1e-5 * horizon;
            let dy = (p.solution(t + h) - p.solution(t - h)) / (2.0 * h);
            let y = p.solution(t);
            let rhs = a * y * y - b * y;
            prop_assert!((dy - rhs).abs() <= 1e-5 * (1.0 + rhs.abs()), "t={t}: {dy} vs {rhs}");
        }
    }

    #[test]
    fn inverse_fit_recovers_exact_blowup(t_star in 0.5f64..20.0, c in 0.1f64..10.0, len in 50usize..400) {
        let ts: Vec<f64> = (0..len).map(|k| 0.95 * t_star * k as f64 / len as f64).collect();
        let ws: Vec<f64> = ts.iter().map(|t| c / (t_star - t)).collect();
        let fit = inverse_fit(&ts, &ws, &FitOptions::default());
        prop_assert!((fit.t_star.unwrap() - t_star).abs() < 1e-9 * t_star);
    }

    #[test]
    fn log_log_slope_of_power_law(p in -3.0f64..3.0, c in 0.1f64..10.0) {
        let x = [0.0125, 0.025, 0.05, 0.1];
        let y: Vec<f64> = x.iter().map(|v: &f64| c * v.powf(p)).collect();
        prop_assert!((log_log_slope(&x, &y).unwrap() - p).abs() < 1e-10);
    }

    #[test]
    fn bump_vanishes_outside_its_support(amplitude in 0.1f64..3.0, x in -3.0f64..3.0) {
        let b = BumpProfile::new(amplitude).unwrap();
        if x.abs() >= 0.5 {
            prop_assert_eq!(b.evaluate(x), 0.0);
            prop_assert_eq!(b.derivative(x), 0.0);
        } else {
            prop_assert!(b.evaluate(x) > 0.0 && b.evaluate(x) <= amplitude);
            prop_assert!(b.derivative(x) <= b.max_dalpha * (1.0 + 1e-9));
        }
    }
}

#[test]
fn standard_bump_peak_slope_matches_dense_scan() {
    let b = standard_bump();
    let n = 1_000_000;
    let best = (0..=n)
        .map(|k| -0.5 + k as f64 / n as f64)
        .map(|x| b.derivative(x))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((b.max_dalpha - best).abs() < 1e-9 * best);
    assert!(b.argmax_z > -0.5 && b.argmax_z < 0.0);
}
