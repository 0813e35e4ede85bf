//! Checks the assembled `γ` and `G` against a direct computation of
//! `L_i w_i` for a smooth solution with prescribed `u` and `u_x`.
//!
//! With `u_t = −a u_x + g` and `w_i = l_i(u) u_x`,
//!
//! ```text
//! L_i w_i = Dl_i[(λ_i − a) u_x + g] u_x − l_i Da[u_x] u_x + l_i Dg u_x
//! ```
//!
//! (the `u_xx` terms cancel because `l_i a = λ_i l_i`). `Dl_i` is taken by
//! central differences of the oriented frame, independent of `c_ijk`.

use std::collections::BTreeMap;

use charblow::coefficients::coefficient_set;
use charblow::model::{builtin_model, REGISTRY};
use charblow::sampling::ball_points;
use charblow::spectral::eigenframe;
use charblow::SystemModel;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};

fn dl_along(model: &SystemModel, u: &DVector<f64>, dir: &DVector<f64>, i: usize) -> DVector<f64> {
    let norm = dir.norm();
    if norm == 0.0 {
        return DVector::zeros(u.len());
    }
    let h = 1e-4 * model.delta() / norm;
    let plus = eigenframe(model, (u + dir * h).as_slice()).unwrap();
    let minus = eigenframe(model, (u - dir * h).as_slice()).unwrap();
    let p2 = eigenframe(model, (u + dir * (2.0 * h)).as_slice()).unwrap();
    let m2 = eigenframe(model, (u - dir * (2.0 * h)).as_slice()).unwrap();
    ((plus.left.row(i) - minus.left.row(i)) * 8.0 - (p2.left.row(i) - m2.left.row(i)))
        .transpose()
        / (12.0 * h)
}

#[test]
fn transport_coefficients_match_direct_derivation() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    for name in REGISTRY {
        let params = if name == "burgers_damped" {
            [("beta".to_string(), 0.7)].into()
        } else {
            BTreeMap::new()
        };
        let model = builtin_model(name, &params).unwrap();
        let n = model.dim();
        for u in ball_points(n, 0.8 * model.delta(), 40, 3) {
            let frame = eigenframe(&model, u.as_slice()).unwrap();
            let set = coefficient_set(&model, u.as_slice()).unwrap();
            let a = model.flux_matrix(u.as_slice());
            let g = model.source_vector(u.as_slice());
            let dg = model.source_jacobian(u.as_slice()).unwrap();
            for _ in 0..5 {
                let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let w = &frame.left * &v;
                let da = model.flux_derivative(u.as_slice(), v.as_slice()).unwrap();
                for i in 0..n {
                    let lam = frame.lambdas[i];
                    let transport = &v * lam - &a * &v + &g;
                    let lhs = dl_along(&model, &u, &transport, i).dot(&v)
                        - (frame.left.row(i) * &da * &v)[(0, 0)]
                        + (frame.left.row(i) * &dg * &v)[(0, 0)];
                    let rhs = set.gamma.quadratic_form(i, w.as_slice())
                        + (set.g.row(i) * &w)[(0, 0)];
                    assert!(
                        (lhs - rhs).abs() < 1e-6 * (1.0 + lhs.abs()),
                        "{name} i={i} u={u:?}: direct {lhs} vs assembled {rhs}"
                    );
                }
            }
        }
    }
}
