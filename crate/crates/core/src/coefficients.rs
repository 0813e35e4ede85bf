//! Interaction coefficients of the wave decomposition.
//!
//! Along the `i`-th characteristic the wave components `w_i = l_i(u) u_x`
//! satisfy
//!
//! ```text
//! L_i w_i = Σ_jk γ_ijk(u) w_j w_k + Σ_k G_ik(u) w_k,   L_i = ∂_t + λ_i ∂_x
//! ```
//!
//! where `γ` and `G` are assembled here from
//! `c_ijk = l_i Da[r_k] r_j`. `Γ` is the symmetric tensor with
//! `Σ γ_ijk w_j w_k + Σ_k w_i w_k <Dλ_i, r_k> = Σ Γ_ijk w_j w_k`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{verify_assumptions, SystemModel};
use crate::sampling;
use crate::spectral::{self, FrameDerivatives, SpectralFrame};

/// Dense `N×N×N` tensor indexed `(i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.idx(i, j, k);
        self.data[idx] = v;
    }

    /// `Σ_jk T_ijk w_j w_k`.
    pub fn quadratic_form(&self, i: usize, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..self.n {
            for k in 0..self.n {
                s += self.get(i, j, k) * w[j] * w[k];
            }
        }
        s
    }

    /// `max_i Σ_jk |T_ijk|`.
    pub fn max_row_abs_sum(&self) -> f64 {
        self.data
            .chunks(self.n * self.n)
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Nested `[i][j][k]` vectors for serialization.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| (0..self.n).map(|k| self.get(i, j, k)).collect())
                    .collect()
            })
            .collect()
    }
}

/// All coefficients at one state.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub u: DVector<f64>,
    pub c: Tensor3,
    pub gamma: Tensor3,
    pub big_gamma: Tensor3,
    pub g: DMatrix<f64>,
}

/// `c_ijk = l_i Da[r_k] r_j` from an existing frame.
pub fn c_from_frame(model: &SystemModel, frame: &SpectralFrame) -> Result<Tensor3> {
    let n = frame.dim();
    let u = frame.u.as_slice();
    let mut c = Tensor3::zeros(n);
    for k in 0..n {
        let rk: Vec<f64> = frame.right.column(k).iter().copied().collect();
        let da = model.flux_derivative(u, &rk)?;
        let m = &frame.left * da * &frame.right;
        for i in 0..n {
            for j in 0..n {
                c.set(i, j, k, m[(i, j)]);
            }
        }
    }
    Ok(c)
}

pub fn c_tensor(model: &SystemModel, u: &[f64]) -> Result<Tensor3> {
    let frame = spectral::eigenframe(model, u)?;
    c_from_frame(model, &frame)
}

/// `γ` from `c`, the eigenvalues and the Gram matrix of the left frame.
pub fn gamma_from_c(c: &Tensor3, frame: &SpectralFrame) -> Tensor3 {
    let n = c.dim();
    let lam = &frame.lambdas;
    let gram = &frame.gram;
    let mut g = Tensor3::zeros(n);
    for i in 0..n {
        g.set(i, i, i, -c.get(i, i, i));
        for k in (0..n).filter(|&k| k != i) {
            let mut s = -c.get(i, i, k) - c.get(i, k, i);
            for j in (0..n).filter(|&j| j != i) {
                s += (lam[i] - lam[k]) / (lam[j] - lam[i]) * c.get(i, j, k) * gram[(j, i)];
            }
            g.set(i, i, k, 0.5 * s);
            g.set(i, k, i, 0.5 * s);
        }
        for j in (0..n).filter(|&j| j != i) {
            for k in (0..n).filter(|&k| k != i) {
                let v = -(lam[j] - lam[k]) / (lam[j] - lam[i]) * c.get(i, j, k)
                    - (lam[k] - lam[j]) / (lam[k] - lam[i]) * c.get(i, k, j);
                g.set(i, j, k, 0.5 * v);
            }
        }
    }
    g
}

pub fn gamma_tensor(model: &SystemModel, u: &[f64]) -> Result<Tensor3> {
    let frame = spectral::eigenframe(model, u)?;
    let c = c_from_frame(model, &frame)?;
    Ok(gamma_from_c(&c, &frame))
}

/// `Γ_ijk = γ_ijk + ½(δ_ij <Dλ_i, r_k> + δ_ik <Dλ_i, r_j>)`.
pub fn big_gamma_from(gamma: &Tensor3, frame: &SpectralFrame, derivs: &FrameDerivatives) -> Tensor3 {
    let n = gamma.dim();
    let mut out = gamma.clone();
    for i in 0..n {
        for k in 0..n {
            let d = derivs.dlambda.row(i).dot(&frame.right.column(k).transpose());
            out.set(i, i, k, out.get(i, i, k) + 0.5 * d);
            out.set(i, k, i, out.get(i, k, i) + 0.5 * d);
        }
    }
    out
}

pub fn big_gamma_tensor(model: &SystemModel, u: &[f64]) -> Result<Tensor3> {
    Ok(coefficient_set(model, u)?.big_gamma)
}

/// `G` by collecting the coefficient of each `w_k` in
/// `Σ_k l_i Dg r_k w_k + Σ_{j≠i,k} c_ijk (l_k g) (<l_j,l_i> w_i − w_j) / (λ_j − λ_i)`.
pub fn g_from(c: &Tensor3, frame: &SpectralFrame, dg: &DMatrix<f64>, g: &DVector<f64>) -> DMatrix<f64> {
    let n = frame.dim();
    let lam = &frame.lambdas;
    let lg = &frame.left * g;
    let mut out = &frame.left * dg * &frame.right;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let mut s = 0.0;
            for k in 0..n {
                s += c.get(i, j, k) * lg[k];
            }
            s /= lam[j] - lam[i];
            out[(i, i)] += s * frame.gram[(j, i)];
            out[(i, j)] -= s;
        }
    }
    out
}

pub fn g_matrix(model: &SystemModel, u: &[f64]) -> Result<DMatrix<f64>> {
    Ok(coefficient_set(model, u)?.g)
}

/// Everything at `u` in one pass (one frame, one set of derivatives).
pub fn coefficient_set(model: &SystemModel, u: &[f64]) -> Result<CoefficientSet> {
    let frame = spectral::eigenframe(model, u)?;
    let derivs = spectral::frame_derivatives(model, u, model.fd_step())?;
    coefficient_set_from(model, &frame, &derivs)
}

pub fn coefficient_set_from(
    model: &SystemModel,
    frame: &SpectralFrame,
    derivs: &FrameDerivatives,
) -> Result<CoefficientSet> {
    let u = frame.u.as_slice();
    let c = c_from_frame(model, frame)?;
    let gamma = gamma_from_c(&c, frame);
    let big_gamma = big_gamma_from(&gamma, frame, derivs);
    let dg = model.source_jacobian(u)?;
    let g = g_from(&c, frame, &dg, &model.source_vector(u));
    Ok(CoefficientSet {
        u: frame.u.clone(),
        c,
        gamma,
        big_gamma,
        g,
    })
}

/// Global bounds over `B_δ(0)` feeding the constant chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub c_bar: f64,
    pub gamma_bar: f64,
    #[serde(rename = "Gamma_bar")]
    pub big_gamma_bar: f64,
    #[serde(rename = "G_bar")]
    pub g_bar: f64,
    pub r_bar: f64,
    #[serde(with = "crate::floats")]
    pub c_lambda: f64,
    pub lambda1_0: f64,
    #[serde(rename = "lambdaN_0")]
    pub lambda_n_0: f64,
    pub gamma_ppp_0: f64,
    pub delta: f64,
    /// Pairs `[r, m]`: `m` is the smallest sampled `γ_ppp(u)` with `|u| ≤ r`.
    /// Only the radii where the running minimum drops are kept.
    pub gamma_ppp_min: Vec<[f64; 2]>,
    pub samples: usize,
    pub seed: u64,
}

impl ModelBounds {
    /// Smallest sampled `γ_ppp(u)` over `|u| ≤ radius`.
    pub fn min_gamma_ppp_within(&self, radius: f64) -> f64 {
        self.gamma_ppp_min
            .iter()
            .take_while(|e| e[0] <= radius)
            .last()
            .map_or(self.gamma_ppp_0, |e| e[1].min(self.gamma_ppp_0))
    }
}

/// Default sample count for [`model_bounds`].
pub const DEFAULT_SAMPLES: usize = 4096;

pub fn model_bounds(model: &SystemModel, samples: usize) -> Result<ModelBounds> {
    model_bounds_seeded(model, samples, 0)
}

#[derive(Clone, Copy, Default)]
struct PointBounds {
    c: f64,
    gamma: f64,
    big_gamma: f64,
    g: f64,
    r: f64,
    radius: f64,
    gamma_ppp: f64,
}

impl PointBounds {
    fn max(self, o: Self) -> Self {
        Self {
            c: self.c.max(o.c),
            gamma: self.gamma.max(o.gamma),
            big_gamma: self.big_gamma.max(o.big_gamma),
            g: self.g.max(o.g),
            r: self.r.max(o.r),
            radius: 0.0,
            gamma_ppp: f64::INFINITY,
        }
    }
}

fn point_bounds(model: &SystemModel, u: &[f64]) -> Result<PointBounds> {
    let frame = spectral::eigenframe(model, u)?;
    let derivs = spectral::frame_derivatives(model, u, model.fd_step())?;
    let set = coefficient_set_from(model, &frame, &derivs)?;
    let g = (0..set.g.nrows())
        .map(|i| set.g.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let r = frame.right.column_iter().map(|c| c.norm()).sum();
    Ok(PointBounds {
        c: set.c.max_row_abs_sum(),
        gamma: set.gamma.max_row_abs_sum(),
        big_gamma: set.big_gamma.max_row_abs_sum(),
        g,
        r,
        radius: u.iter().map(|x| x * x).sum::<f64>().sqrt(),
        gamma_ppp: {
            let p = model.gnl_index();
            set.gamma.get(p, p, p)
        },
    })
}

/// Bounds from a deterministic Halton sample of `B_δ(0)`; `seed` offsets the
/// sequence.
pub fn model_bounds_seeded(model: &SystemModel, samples: usize, seed: u64) -> Result<ModelBounds> {
    let report = verify_assumptions(model, 1e-10);
    if !report.all_ok() {
        return Err(Error::Assumption(format!(
            "model `{}` fails the standing assumptions: {report:?}",
            model.name()
        )));
    }
    sample_bounds(model, samples, seed)
}

/// The sampling part of [`model_bounds_seeded`] without the assumption gate.
/// Useful for degenerate reference systems (e.g. constant coefficients).
pub fn sample_bounds(model: &SystemModel, samples: usize, seed: u64) -> Result<ModelBounds> {
    let n = model.dim();
    let points = sampling::ball_points(n, model.delta(), samples.max(1), seed);
    let per_point: Vec<PointBounds> = points
        .par_iter()
        .map(|u| point_bounds(model, u.as_slice()))
        .collect::<Result<_>>()?;
    let mut by_radius: Vec<(f64, f64)> = per_point.iter().map(|b| (b.radius, b.gamma_ppp)).collect();
    by_radius.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gamma_ppp_min: Vec<[f64; 2]> = Vec::new();
    for (r, g) in by_radius {
        if gamma_ppp_min.last().is_none_or(|last| g < last[1]) {
            gamma_ppp_min.push([r, g]);
        }
    }
    let sup = per_point
        .into_iter()
        .fold(PointBounds::default(), PointBounds::max);

    let zero = vec![0.0; n];
    let frame0 = spectral::eigenframe(model, &zero)?;
    let gamma0 = gamma_tensor(model, &zero)?;
    let p = model.gnl_index();
    let c_lambda = spectral::spectral_gap_seeded(model, samples.max(1), seed)?;
    Ok(ModelBounds {
        c_bar: sup.c.max(1.0),
        gamma_bar: sup.gamma,
        big_gamma_bar: sup.big_gamma,
        g_bar: sup.g,
        r_bar: sup.r,
        c_lambda,
        lambda1_0: frame0.lambdas[0],
        lambda_n_0: frame0.lambdas[n - 1],
        gamma_ppp_0: gamma0.get(p, p, p),
        delta: model.delta(),
        gamma_ppp_min,
        samples: samples.max(1),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, constant_model};
    use std::collections::BTreeMap;

    fn none() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn burgers_coefficients_at_origin() {
        let m = builtin_model("burgers", &none()).unwrap();
        let s = coefficient_set(&m, &[0.0]).unwrap();
        assert_eq!(s.c.get(0, 0, 0), -1.0);
        assert_eq!(s.gamma.get(0, 0, 0), 1.0);
        assert!(s.big_gamma.get(0, 0, 0).abs() < 1e-10);
        assert_eq!(s.g[(0, 0)], 0.0);
    }

    #[test]
    fn damped_burgers_g_is_minus_beta() {
        let params: BTreeMap<String, f64> = [("beta".to_string(), 0.3)].into();
        let m = builtin_model("burgers_damped", &params).unwrap();
        let g = g_matrix(&m, &[0.0]).unwrap();
        assert!((g[(0, 0)] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn constant_model_has_vanishing_coefficients() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let m = constant_model("swap", a, 0.5, 2).unwrap();
        let s = coefficient_set(&m, &[0.1, -0.05]).unwrap();
        assert_eq!(s.c.max_abs(), 0.0);
        assert_eq!(s.gamma.max_abs(), 0.0);
        assert!(s.big_gamma.max_abs() < 1e-12);
        assert_eq!(s.g.amax(), 0.0);
    }

    #[test]
    fn constant_scalar_bounds() {
        let m = constant_model("c", DMatrix::from_element(1, 1, 0.7), 0.5, 1).unwrap();
        // Constant flux is linearly degenerate, so the gated entry point refuses it.
        assert!(matches!(model_bounds(&m, 64), Err(Error::Assumption(_))));
        let b = sample_bounds(&m, 64, 0).unwrap();
        assert_eq!(b.gamma_bar, 0.0);
        assert_eq!(b.big_gamma_bar, 0.0);
        assert_eq!(b.g_bar, 0.0);
        assert_eq!(b.c_bar, 1.0);
        assert_eq!(b.r_bar, 1.0);
        assert_eq!(b.gamma_ppp_0, 0.0);
    }

    #[test]
    fn burgers_bounds() {
        let m = builtin_model("burgers", &none()).unwrap();
        let b = model_bounds(&m, 256).unwrap();
        assert_eq!(b.gamma_bar, 1.0);
        assert_eq!(b.r_bar, 1.0);
        assert_eq!(b.gamma_ppp_0, 1.0);
        assert_eq!(b.c_lambda, f64::INFINITY);
        assert_eq!(b.g_bar, 0.0);
    }

    #[test]
    fn euler_c_ppp_matches_hand_gnl() {
        let m = builtin_model("euler_friction", &none()).unwrap();
        let c = c_tensor(&m, &[0.0, 0.0]).unwrap();
        // <Dλ2, r2>(0) = -3√3/4 after orientation.
        assert!((c.get(1, 1, 1) + 3.0 * 3f64.sqrt() / 4.0).abs() < 1e-12);
    }
}
