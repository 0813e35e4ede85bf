//! Eigen-frames of `a(u)`.
//!
//! Eigenvalues are sorted ascending, which fixes the field index. Left
//! eigenvectors are normalized to unit length and right eigenvectors are
//! scaled so that `L R = I`. Signs are fixed once at the origin (field `p`
//! oriented so that `<Dλ_p(0), r_p(0)> < 0`, the others by a largest-entry
//! convention) and carried to other states by maximal overlap with the
//! origin frame.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::sampling;

/// Eigenvalues closer than this (relative to the spectral scale) count as
/// repeated.
pub const SEPARATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SpectralFrame {
    pub u: DVector<f64>,
    /// Ascending.
    pub lambdas: DVector<f64>,
    /// Row `i` is `l_i`.
    pub left: DMatrix<f64>,
    /// Column `i` is `r_i`.
    pub right: DMatrix<f64>,
    /// `gram[(j, i)] = <l_j, l_i>`.
    pub gram: DMatrix<f64>,
}

impl SpectralFrame {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// Wave components `w_i = l_i · v`.
    pub fn project(&self, v: &[f64]) -> DVector<f64> {
        &self.left * DVector::from_column_slice(v)
    }
}

/// Frame at the origin after orientation; the reference for sign continuity.
#[derive(Debug, Clone)]
pub struct Orientation {
    pub(crate) frame: SpectralFrame,
}

/// Partial derivatives of eigenvalues and right eigenvectors.
#[derive(Debug, Clone)]
pub struct FrameDerivatives {
    /// Row `i` is `Dλ_i(u)`.
    pub dlambda: DMatrix<f64>,
    /// `dr[k]` has columns `∂r_i/∂u_k`.
    pub dr: Vec<DMatrix<f64>>,
}

impl FrameDerivatives {
    /// Directional derivative of `r_i` along `dir`.
    pub fn dr_dir(&self, i: usize, dir: &[f64]) -> DVector<f64> {
        let n = self.dlambda.nrows();
        let mut out = DVector::zeros(n);
        for (k, d) in dir.iter().enumerate() {
            out += self.dr[k].column(i) * *d;
        }
        out
    }

    /// `<Dλ_i, v>`.
    pub fn dlambda_along(&self, i: usize, v: &[f64]) -> f64 {
        self.dlambda
            .row(i)
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Real eigenvalues in ascending order, or `None` when some are complex.
pub fn sorted_eigenvalues(a: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let mut vals = match n {
        1 => vec![a[(0, 0)]],
        2 => {
            let half_tr = 0.5 * (a[(0, 0)] + a[(1, 1)]);
            let half_diff = 0.5 * (a[(0, 0)] - a[(1, 1)]);
            let disc = half_diff * half_diff + a[(0, 1)] * a[(1, 0)];
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            vec![half_tr - s, half_tr + s]
        }
        _ => a.clone().eigenvalues()?.iter().copied().collect(),
    };
    if vals.iter().any(|v| !v.is_finite()) {
        return None;
    }
    vals.sort_by(|x, y| x.total_cmp(y));
    Some(DVector::from_vec(vals))
}

/// Largest `|λ|` of a row-major `n×n` matrix; closed forms for `n ≤ 2`.
pub(crate) fn spectral_radius_row_major(n: usize, a: &[f64]) -> Option<f64> {
    match n {
        1 => Some(a[0].abs()),
        2 => {
            let half_tr = 0.5 * (a[0] + a[3]);
            let half_diff = 0.5 * (a[0] - a[3]);
            let disc = half_diff * half_diff + a[1] * a[2];
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            Some((half_tr - s).abs().max((half_tr + s).abs()))
        }
        _ => {
            let m = DMatrix::from_row_slice(n, n, a);
            sorted_eigenvalues(&m).map(|l| l.amax())
        }
    }
}

/// Sorted eigenvalues of `a(u)` for field speeds; refuses complex spectra.
pub fn eigenvalues(model: &SystemModel, u: &[f64]) -> Result<DVector<f64>> {
    sorted_eigenvalues(&model.flux_matrix(u)).ok_or_else(|| Error::NotHyperbolic {
        u: u.to_vec(),
        reason: "complex eigenvalues".into(),
    })
}

fn null_vector(b: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = b.nrows();
    if n == 2 {
        let r0 = (b[(0, 0)].powi(2) + b[(0, 1)].powi(2)).sqrt();
        let r1 = (b[(1, 0)].powi(2) + b[(1, 1)].powi(2)).sqrt();
        let v = if r0 >= r1 {
            DVector::from_vec(vec![b[(0, 1)], -b[(0, 0)]])
        } else {
            DVector::from_vec(vec![-b[(1, 1)], b[(1, 0)]])
        };
        let norm = v.norm();
        return (norm > 0.0).then(|| v / norm);
    }
    let svd = b.clone().svd(false, true);
    let v_t = svd.v_t?;
    let k = svd.singular_values.imin();
    Some(v_t.row(k).transpose())
}

/// Eigen-decomposition with the normalization but without sign orientation.
fn raw_frame(u: &[f64], a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let fail = |reason: String| Error::NotHyperbolic {
        u: u.to_vec(),
        reason,
    };
    let lambdas = sorted_eigenvalues(a).ok_or_else(|| fail("complex eigenvalues".into()))?;
    let scale = lambdas.amax().max(1.0);
    for w in lambdas.as_slice().windows(2) {
        if w[1] - w[0] <= SEPARATION_TOL * scale {
            return Err(fail(format!(
                "eigenvalues {} and {} are not separated",
                w[0], w[1]
            )));
        }
    }
    if n == 1 {
        let one = DMatrix::from_element(1, 1, 1.0);
        return Ok((lambdas, one.clone(), one));
    }
    let mut right = DMatrix::zeros(n, n);
    for i in 0..n {
        let shifted = a - DMatrix::identity(n, n) * lambdas[i];
        let v = null_vector(&shifted).ok_or_else(|| fail("eigenvector solve failed".into()))?;
        right.set_column(i, &v);
    }
    let mut left = right
        .clone()
        .try_inverse()
        .ok_or_else(|| fail("eigenvector matrix is singular".into()))?;
    for i in 0..n {
        let norm = left.row(i).norm();
        left.row_mut(i).unscale_mut(norm);
        right.column_mut(i).scale_mut(norm);
    }
    Ok((lambdas, left, right))
}

fn flip(left: &mut DMatrix<f64>, right: &mut DMatrix<f64>, i: usize) {
    left.row_mut(i).neg_mut();
    right.column_mut(i).neg_mut();
}

fn assemble(u: &[f64], lambdas: DVector<f64>, left: DMatrix<f64>, right: DMatrix<f64>) -> SpectralFrame {
    let gram = &left * left.transpose();
    SpectralFrame {
        u: DVector::from_column_slice(u),
        lambdas,
        left,
        right,
        gram,
    }
}

/// Computes the oriented origin frame. Called once per model.
pub(crate) fn orient_origin(model: &SystemModel) -> Result<Orientation> {
    let n = model.dim();
    let zero = vec![0.0; n];
    let (lambdas, mut left, mut right) = raw_frame(&zero, &model.flux_matrix(&zero))?;
    for i in 0..n {
        let row = left.row(i);
        let big = row.amax();
        let lead = row
            .iter()
            .position(|x| x.abs() >= big * (1.0 - 1e-12))
            .unwrap_or(0);
        if row[lead] < 0.0 {
            flip(&mut left, &mut right, i);
        }
    }
    // <Dλ_p, r_p> = l_p Da[r_p] r_p since l_p r_p = 1.
    let p = model.gnl_index();
    let rp: Vec<f64> = right.column(p).iter().copied().collect();
    let da = model.flux_derivative(&zero, &rp)?;
    let gnl = (left.row(p) * da * right.column(p))[(0, 0)];
    if gnl > 0.0 {
        flip(&mut left, &mut right, p);
    }
    Ok(Orientation {
        frame: assemble(&zero, lambdas, left, right),
    })
}

/// Oriented eigen-frame of `a(u)` for `|u| ≤ 2δ`.
pub fn eigenframe(model: &SystemModel, u: &[f64]) -> Result<SpectralFrame> {
    model.check_in_ball(u, 2.0 * model.delta())?;
    let origin = &model.orientation()?.frame;
    if u.iter().all(|x| *x == 0.0) {
        return Ok(origin.clone());
    }
    let (lambdas, mut left, mut right) = raw_frame(u, &model.flux_matrix(u))?;
    for i in 0..model.dim() {
        if left.row(i).dot(&origin.left.row(i)) < 0.0 {
            flip(&mut left, &mut right, i);
        }
    }
    Ok(assemble(u, lambdas, left, right))
}

/// Central-difference derivatives of `λ_i` and `r_i` at `u`.
pub fn frame_derivatives(model: &SystemModel, u: &[f64], step: f64) -> Result<FrameDerivatives> {
    let n = model.dim();
    let base = eigenframe(model, u)?;
    let mut dlambda = DMatrix::zeros(n, n);
    let mut dr = Vec::with_capacity(n);
    for k in 0..n {
        let mut plus = u.to_vec();
        let mut minus = u.to_vec();
        plus[k] += step;
        minus[k] -= step;
        let mut fp = eigenframe(model, &plus)?;
        let mut fm = eigenframe(model, &minus)?;
        for f in [&mut fp, &mut fm] {
            for i in 0..n {
                if f.left.row(i).dot(&base.left.row(i)) < 0.0 {
                    flip(&mut f.left, &mut f.right, i);
                }
            }
        }
        for i in 0..n {
            dlambda[(i, k)] = (fp.lambdas[i] - fm.lambdas[i]) / (2.0 * step);
        }
        dr.push((&fp.right - &fm.right) / (2.0 * step));
    }
    Ok(FrameDerivatives { dlambda, dr })
}

/// `c_λ = min_{i≠p} inf_{u∈B_δ} |λ_i(u) − λ_p(u)|` over a deterministic
/// sample; `+∞` when `N = 1`.
pub fn spectral_gap(model: &SystemModel, samples: usize) -> Result<f64> {
    spectral_gap_seeded(model, samples, 0)
}

pub fn spectral_gap_seeded(model: &SystemModel, samples: usize, seed: u64) -> Result<f64> {
    let n = model.dim();
    if n == 1 {
        return Ok(f64::INFINITY);
    }
    let p = model.gnl_index();
    let mut gap = f64::INFINITY;
    for u in sampling::ball_points(n, model.delta(), samples, seed) {
        let l = eigenvalues(model, u.as_slice())?;
        for i in (0..n).filter(|&i| i != p) {
            gap = gap.min((l[i] - l[p]).abs());
        }
    }
    if gap <= SEPARATION_TOL {
        return Err(Error::NotHyperbolic {
            u: vec![],
            reason: format!("spectral gap {gap} on B_delta(0) is too small"),
        });
    }
    Ok(gap)
}

/// Serializable view of a frame for debugging output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDump {
    pub u: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
    pub gram: Vec<Vec<f64>>,
    pub dlambda: Vec<Vec<f64>>,
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl FrameDump {
    pub fn new(frame: &SpectralFrame, derivs: &FrameDerivatives) -> Self {
        Self {
            u: frame.u.iter().copied().collect(),
            lambdas: frame.lambdas.iter().copied().collect(),
            left: rows(&frame.left),
            // Stored as a list of right eigenvectors.
            right: rows(&frame.right.transpose()),
            gram: rows(&frame.gram),
            dlambda: rows(&derivs.dlambda),
        }
    }
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
    fn burgers_frame_is_negative_one() {
        let m = builtin_model("burgers", &none()).unwrap();
        let f = eigenframe(&m, &[0.0]).unwrap();
        assert_eq!(f.lambdas[0], 0.0);
        assert_eq!(f.left[(0, 0)], -1.0);
        assert_eq!(f.right[(0, 0)], -1.0);
        let d = frame_derivatives(&m, &[0.0], m.fd_step()).unwrap();
        assert!((d.dlambda[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn symmetric_swap_matrix_frame() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let m = constant_model("swap", a, 0.5, 2).unwrap();
        let f = eigenframe(&m, &[0.0, 0.0]).unwrap();
        assert!((f.lambdas[0] + 1.0).abs() < 1e-15);
        assert!((f.lambdas[1] - 1.0).abs() < 1e-15);
        let s = 0.5f64.sqrt();
        assert!((f.left[(0, 0)] - s).abs() < 1e-14 && (f.left[(0, 1)] + s).abs() < 1e-14);
        assert!((f.right[(0, 0)] - s).abs() < 1e-14 && (f.right[(1, 0)] + s).abs() < 1e-14);
        let d = frame_derivatives(&m, &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(d.dlambda.amax(), 0.0);
    }

    #[test]
    fn euler_eigenvalues_and_gnl_match_hand_values() {
        let m = builtin_model("euler_friction", &none()).unwrap();
        let f = eigenframe(&m, &[0.0, 0.0]).unwrap();
        let c = 2f64.sqrt();
        assert!((f.lambdas[0] + c).abs() < 1e-14 && (f.lambdas[1] - c).abs() < 1e-14);
        // λ2 = v + c(ρ), c = sqrt(2ρ): Dλ2 = (c'(ρ), 1) = (1/√2, 1) at ρ = 1.
        // r2 ∝ (ρ, c) with l2 ∝ (c, ρ)/|.|, l2 r2 = 1 ⇒ r2 = (1, √2)·√3/(2√2).
        // <Dλ2, r2> = √3/(2√2)·(1/√2 + √2) = 3√3/4, oriented negative.
        let d = frame_derivatives(&m, &[0.0, 0.0], m.fd_step()).unwrap();
        let gnl = d.dlambda_along(1, f.right.column(1).as_slice());
        assert!((gnl + 3.0 * 3f64.sqrt() / 4.0).abs() < 1e-9, "gnl = {gnl}");
    }

    #[test]
    fn frame_invariants_hold_off_origin() {
        for name in crate::model::REGISTRY {
            let m = builtin_model(name, &none()).unwrap();
            let n = m.dim();
            let u: Vec<f64> = (0..n).map(|k| 0.4 * m.delta() * (k as f64 + 1.0) / n as f64).collect();
            let f = eigenframe(&m, &u).unwrap();
            let a = m.flux_matrix(&u);
            let lr = &f.left * &f.right - DMatrix::identity(n, n);
            assert!(lr.amax() < 1e-12, "{name}");
            let res = &f.left * &a - DMatrix::from_diagonal(&f.lambdas) * &f.left;
            assert!(res.amax() < 1e-12, "{name}");
            for i in 0..n {
                assert!((f.left.row(i).norm() - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gap_of_constant_swap_is_two() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let m = constant_model("swap", a, 0.5, 2).unwrap();
        assert!((spectral_gap(&m, 64).unwrap() - 2.0).abs() < 1e-14);
        let b = builtin_model("burgers", &none()).unwrap();
        assert_eq!(spectral_gap(&b, 64).unwrap(), f64::INFINITY);
    }

    #[test]
    fn stencil_outside_ball_is_rejected() {
        let m = builtin_model("burgers", &none()).unwrap();
        assert!(matches!(
            frame_derivatives(&m, &[1.0], 1e-3),
            Err(Error::OutsideBall { .. })
        ));
    }
}
