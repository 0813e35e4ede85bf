//! Simple-wave initial data `u⁰(x) = U(ε α(x))`.
//!
//! `α` is a smooth bump supported in `(−1/2, 1/2)` and `U` is the integral
//! curve of the genuinely nonlinear right eigenvector field through the
//! origin, so that at `t = 0` only the `p`-th wave component is excited.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::sampling;
use crate::spectral;

/// `α(x) = A exp(1 − 1/(1 − 4x²))` on `|x| < 1/2`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub amplitude: f64,
    pub support_radius: f64,
    pub max_dalpha: f64,
    pub argmax_z: f64,
}

/// Points in the brute-force scan that backs up the optimizer.
const SCAN_POINTS: usize = 20_000;

impl BumpProfile {
    pub fn new(amplitude: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::param("amplitude", format!("must be positive, got {amplitude}")));
        }
        let mut b = Self {
            amplitude,
            support_radius: 0.5,
            max_dalpha: 0.0,
            argmax_z: 0.0,
        };
        let z = golden_max(|x| b.derivative(x), -0.5, 0.0, 1e-13);
        // Dense scan as a guard against the optimizer settling on a wrong
        // local maximum.
        let (scan_x, scan_v) = (0..=SCAN_POINTS)
            .map(|k| -0.5 + k as f64 / SCAN_POINTS as f64)
            .map(|x| (x, b.derivative(x)))
            .fold((0.0, f64::NEG_INFINITY), |a, c| if c.1 > a.1 { c } else { a });
        let v = b.derivative(z);
        assert!(
            v >= scan_v && (z - scan_x).abs() < 2.0 / SCAN_POINTS as f64,
            "bump maximization disagrees with scan: {z} vs {scan_x}"
        );
        b.max_dalpha = v;
        b.argmax_z = z;
        Ok(b)
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let s = 1.0 - 4.0 * x * x;
        if s <= 0.0 {
            return 0.0;
        }
        self.amplitude * (1.0 - 1.0 / s).exp()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let s = 1.0 - 4.0 * x * x;
        if s <= 0.0 {
            return 0.0;
        }
        self.evaluate(x) * (-8.0 * x / (s * s))
    }

    /// `∫|α'| = 2A` since `α` rises monotonically to `A` and falls back.
    pub fn total_variation(&self) -> f64 {
        2.0 * self.amplitude
    }
}

/// The unit-amplitude bump.
pub fn standard_bump() -> BumpProfile {
    BumpProfile::new(1.0).expect("unit amplitude is valid")
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Integral curve `U' = r_p(U)`, `U(0) = 0`, sampled on a uniform ξ grid.
#[derive(Debug, Clone)]
pub struct IntegralCurve {
    pub xi_grid: Vec<f64>,
    pub points: Vec<DVector<f64>>,
    /// `r_p(U(ξ))` at the grid points, used as Hermite slopes.
    pub slopes: Vec<DVector<f64>>,
    pub step: f64,
    /// The requested range was cut short because `|U|` reached `δ`.
    pub truncated: bool,
}

impl IntegralCurve {
    /// Interpolation order of [`IntegralCurve::evaluate`].
    pub const INTERPOLANT_ORDER: usize = 3;

    pub fn xi_range(&self) -> (f64, f64) {
        (self.xi_grid[0], *self.xi_grid.last().unwrap())
    }

    /// Cubic Hermite interpolation of `U(ξ)`.
    pub fn evaluate(&self, xi: f64) -> Result<DVector<f64>> {
        let (lo, hi) = self.xi_range();
        let slack = 1e-12 * self.step;
        if xi < lo - slack || xi > hi + slack {
            return Err(Error::param(
                "epsilon",
                format!("curve parameter {xi} outside the stored range [{lo}, {hi}]"),
            ));
        }
        let pos = ((xi - lo) / self.step).floor() as usize;
        let k = pos.min(self.xi_grid.len() - 2);
        let h = self.step;
        let s = ((xi - self.xi_grid[k]) / h).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(&self.points[k] * h00
            + &self.slopes[k] * (h10 * h)
            + &self.points[k + 1] * h01
            + &self.slopes[k + 1] * (h11 * h))
    }

    /// Largest `|U'(ξ) − r_p(U(ξ))|` at interior grid points, with `U'` from
    /// 4th-order central differences of the stored points.
    pub fn max_defect(&self) -> f64 {
        let n = self.points.len();
        let h = self.step;
        (2..n.saturating_sub(2))
            .map(|k| {
                let d = (&self.points[k - 2] - &self.points[k - 1] * 8.0 + &self.points[k + 1] * 8.0
                    - &self.points[k + 2])
                    / (12.0 * h);
                (d - &self.slopes[k]).norm()
            })
            .fold(0.0, f64::max)
    }
}

fn r_p(model: &SystemModel, u: &[f64]) -> Result<DVector<f64>> {
    let f = spectral::eigenframe(model, u)?;
    Ok(f.right.column(model.gnl_index()).into_owned())
}

/// Default ξ half-range `0.9 δ / min|r_p|` with the minimum over a sample of
/// `B_δ(0)`.
pub fn default_xi_max(model: &SystemModel) -> Result<f64> {
    let mut min_r = f64::INFINITY;
    for u in sampling::ball_points(model.dim(), model.delta(), 256, 0) {
        min_r = min_r.min(r_p(model, u.as_slice())?.norm());
    }
    Ok(0.9 * model.delta() / min_r)
}

/// RK4 on `[−xi_max, xi_max]`, stopping a branch before `|U|` reaches `δ`.
pub fn integral_curve(model: &SystemModel, xi_max: f64, step: f64) -> Result<IntegralCurve> {
    if !(xi_max > 0.0 && step > 0.0 && step <= xi_max) {
        return Err(Error::param(
            "step",
            format!("need 0 < step <= xi_max, got step {step}, xi_max {xi_max}"),
        ));
    }
    let n = model.dim();
    let steps = (xi_max / step).round() as usize;
    let delta = model.delta();
    let mut truncated = false;
    let mut branch = |sign: f64| -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut u = DVector::zeros(n);
        out.push((u.clone(), r_p(model, u.as_slice())?));
        let h = sign * step;
        for _ in 0..steps {
            let k1 = r_p(model, u.as_slice())?;
            let k2 = r_p(model, (&u + &k1 * (0.5 * h)).as_slice())?;
            let k3 = r_p(model, (&u + &k2 * (0.5 * h)).as_slice())?;
            let k4 = r_p(model, (&u + &k3 * h).as_slice())?;
            let next = &u + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if next.norm() >= delta {
                truncated = true;
                break;
            }
            u = next;
            let slope = r_p(model, u.as_slice())?;
            out.push((u.clone(), slope));
        }
        Ok(out)
    };
    let plus = branch(1.0)?;
    let minus = branch(-1.0)?;
    let mut xi_grid = Vec::with_capacity(plus.len() + minus.len());
    let mut points = Vec::with_capacity(xi_grid.capacity());
    let mut slopes = Vec::with_capacity(xi_grid.capacity());
    for (k, (u, r)) in minus.iter().enumerate().skip(1).rev() {
        xi_grid.push(-(k as f64) * step);
        points.push(u.clone());
        slopes.push(r.clone());
    }
    for (k, (u, r)) in plus.into_iter().enumerate() {
        xi_grid.push(k as f64 * step);
        points.push(u);
        slopes.push(r);
    }
    if xi_grid.len() < 2 {
        return Err(Error::Assumption("integral curve leaves B_delta(0) immediately".into()));
    }
    Ok(IntegralCurve {
        xi_grid,
        points,
        slopes,
        step,
        truncated,
    })
}

/// `u⁰(x) = U(ε α(x))`, or `U(ε α(x/(εκ)))` in the rescaled form.
#[derive(Debug, Clone)]
pub struct InitialDataSpec {
    pub epsilon: f64,
    pub kappa: Option<f64>,
    pub rescaled: bool,
    pub profile: BumpProfile,
    pub curve: IntegralCurve,
}

impl InitialDataSpec {
    pub fn new(
        epsilon: f64,
        kappa: Option<f64>,
        rescaled: bool,
        profile: BumpProfile,
        curve: IntegralCurve,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::param("epsilon", format!("must lie in (0, 1], got {epsilon}")));
        }
        if let Some(k) = kappa {
            if !(0.0..=1.0).contains(&k) {
                return Err(Error::param("kappa", format!("must lie in [0, 1], got {k}")));
            }
        }
        if rescaled && !kappa.is_some_and(|k| k > 0.0) {
            return Err(Error::param("kappa", "the rescaled form needs kappa > 0"));
        }
        let (_, hi) = curve.xi_range();
        if epsilon * profile.amplitude > hi {
            return Err(Error::param(
                "epsilon",
                format!(
                    "epsilon * amplitude = {} exceeds the integral curve range {hi}",
                    epsilon * profile.amplitude
                ),
            ));
        }
        Ok(Self {
            epsilon,
            kappa,
            rescaled,
            profile,
            curve,
        })
    }

    /// Convenience constructor: curve with the default range and step
    /// `xi_max / 2000`.
    pub fn for_model(
        model: &SystemModel,
        epsilon: f64,
        kappa: Option<f64>,
        rescaled: bool,
        profile: BumpProfile,
    ) -> Result<Self> {
        let xi_max = default_xi_max(model)?.max(epsilon * profile.amplitude * 1.01);
        let curve = integral_curve(model, xi_max, xi_max / 2000.0)?;
        Self::new(epsilon, kappa, rescaled, profile, curve)
    }

    /// Multiplier `s` of the source in `u_t + a u_x = s g`: `εκ` for the
    /// scaled problem, `1` for the rescaled form.
    pub fn source_scale(&self) -> f64 {
        if self.rescaled {
            1.0
        } else {
            self.epsilon * self.kappa.unwrap_or(0.0)
        }
    }

    /// Spatial dilation: `x = length_scale · x'` maps the unit bump frame to
    /// physical coordinates.
    pub fn length_scale(&self) -> f64 {
        if self.rescaled {
            self.epsilon * self.kappa.unwrap_or(1.0)
        } else {
            1.0
        }
    }

    /// Half-width of the data support.
    pub fn support_half_width(&self) -> f64 {
        self.profile.support_radius * self.length_scale()
    }

    pub fn evaluate(&self, x: f64) -> Result<DVector<f64>> {
        let xs = x / self.length_scale();
        self.curve.evaluate(self.epsilon * self.profile.evaluate(xs))
    }

    /// `ε α'(x')` in the unscaled variable; the exact initial `w_p`.
    pub fn initial_wp(&self, x: f64) -> f64 {
        let l = self.length_scale();
        self.epsilon * self.profile.derivative(x / l) / l
    }
}

pub fn sample_data(spec: &InitialDataSpec, x_grid: &[f64]) -> Result<Vec<DVector<f64>>> {
    x_grid.iter().map(|&x| spec.evaluate(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;
    use std::collections::BTreeMap;

    #[test]
    fn bump_basic_values() {
        let b = standard_bump();
        assert_eq!(b.evaluate(0.0), 1.0);
        assert_eq!(b.evaluate(0.5), 0.0);
        assert_eq!(b.evaluate(-0.5), 0.0);
        assert_eq!(b.derivative(0.5), 0.0);
        assert!(b.argmax_z > -0.5 && b.argmax_z < 0.0);
        // α'' = 0 reduces to 48x⁴ = 1.
        assert!((b.argmax_z + 48f64.powf(-0.25)).abs() < 1e-7);
    }

    #[test]
    fn amplitude_scales_max_slope() {
        let a = BumpProfile::new(1.0).unwrap();
        let b = BumpProfile::new(2.0).unwrap();
        assert!((b.max_dalpha - 2.0 * a.max_dalpha).abs() < 1e-12);
        assert!(BumpProfile::new(0.0).is_err());
    }

    #[test]
    fn burgers_curve_is_minus_xi() {
        let m = builtin_model("burgers", &BTreeMap::new()).unwrap();
        let c = integral_curve(&m, 0.4, 0.01).unwrap();
        assert!(!c.truncated);
        for (xi, u) in c.xi_grid.iter().zip(&c.points) {
            assert!((u[0] + xi).abs() < 1e-14);
        }
        assert!((c.evaluate(0.123).unwrap()[0] + 0.123).abs() < 1e-14);
        assert!(c.evaluate(0.5).is_err());
    }

    #[test]
    fn curve_truncates_at_ball() {
        let m = builtin_model("burgers", &BTreeMap::new()).unwrap();
        let c = integral_curve(&m, 2.0, 0.01).unwrap();
        assert!(c.truncated);
        assert!(c.points.iter().all(|u| u.norm() < 0.5));
    }

    #[test]
    fn burgers_data_is_minus_eps_alpha() {
        let m = builtin_model("burgers", &BTreeMap::new()).unwrap();
        let spec = InitialDataSpec::for_model(&m, 0.1, None, false, standard_bump()).unwrap();
        for x in [-0.4, -0.1, 0.0, 0.3, 0.75] {
            let u = spec.evaluate(x).unwrap();
            assert!((u[0] + 0.1 * standard_bump().evaluate(x)).abs() < 1e-14);
        }
        assert_eq!(spec.source_scale(), 0.0);
    }

    #[test]
    fn rescaled_needs_positive_kappa() {
        let m = builtin_model("burgers", &BTreeMap::new()).unwrap();
        assert!(InitialDataSpec::for_model(&m, 0.1, Some(0.0), true, standard_bump()).is_err());
        let s = InitialDataSpec::for_model(&m, 0.1, Some(0.5), true, standard_bump()).unwrap();
        assert_eq!(s.support_half_width(), 0.025);
        assert_eq!(s.evaluate(0.03).unwrap()[0], 0.0);
        assert_eq!(s.source_scale(), 1.0);
    }
}
