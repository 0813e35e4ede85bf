//! System definitions `u_t + a(u) u_x = g(u)` and the built-in registry.
//!
//! Every registry model is written in shifted variables so that the
//! background state sits at the origin. The working set is the ball
//! `B_{2δ}(0)`; `δ` defaults to half the radius on which strict
//! hyperbolicity was checked by hand for that model.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, Orientation};

/// Names accepted by [`builtin_model`].
pub const REGISTRY: [&str; 4] = ["burgers", "burgers_damped", "euler_friction", "relax_2x2"];

/// Names accepted by [`diagnostic_model`]. These deliberately include
/// systems that violate the standing assumptions.
pub const DIAGNOSTICS: [&str; 3] = ["test:transport", "test:offset_source", "test:repeated"];

/// Default threshold on `|<Dλ_p(0), r_p(0)>|` for genuine nonlinearity.
pub const GNL_THRESHOLD: f64 = 1e-8;

/// The coefficient maps of a system.
///
/// `flux_jacobian` and `source` sit on the hot path of the integrator and
/// write into caller-provided buffers. The optional derivative hooks return
/// `None` when the model does not know them in closed form; callers then fall
/// back to central differences.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `a(u)` row-major into `out` (length `N*N`).
    fn flux_jacobian(&self, u: &[f64], out: &mut [f64]);

    /// Writes `g(u)` into `out` (length `N`).
    fn source(&self, u: &[f64], out: &mut [f64]);

    /// Directional derivative `d/ds a(u + s dir)` at `s = 0`.
    fn flux_jacobian_derivative(&self, _u: &[f64], _dir: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Jacobian `Dg(u)`.
    fn source_jacobian(&self, _u: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// A system `u_t + a(u) u_x = g(u)` together with its working radius and the
/// index of the genuinely nonlinear field.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    params: BTreeMap<String, f64>,
    delta: f64,
    gnl_index: usize,
    background: Vec<f64>,
    dynamics: Arc<dyn Dynamics>,
    orientation: Arc<OnceLock<std::result::Result<Orientation, String>>>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("dim", &self.dim())
            .field("delta", &self.delta)
            .field("p", &(self.gnl_index + 1))
            .finish()
    }
}

impl SystemModel {
    /// Wraps a dynamics object. `p` is 1-based, matching the usual labelling
    /// of characteristic fields.
    pub fn new(
        name: impl Into<String>,
        params: BTreeMap<String, f64>,
        dynamics: Arc<dyn Dynamics>,
        delta: f64,
        p: usize,
    ) -> Result<Self> {
        let n = dynamics.dim();
        if n == 0 {
            return Err(Error::param("dim", "state dimension must be positive"));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::param("delta", format!("must be positive, got {delta}")));
        }
        if p == 0 || p > n {
            return Err(Error::param("p", format!("must lie in 1..={n}, got {p}")));
        }
        Ok(Self {
            name: name.into(),
            params,
            delta,
            gnl_index: p - 1,
            background: vec![0.0; n],
            dynamics,
            orientation: Arc::new(OnceLock::new()),
        })
    }

    fn with_background(mut self, background: Vec<f64>) -> Self {
        self.background = background;
        self
    }

    /// Copy of the model with a smaller working radius. Enlarging `δ` is
    /// refused since the default was hand-verified.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= self.delta) {
            return Err(Error::param(
                "delta",
                format!("may only shrink (0, {}], got {delta}", self.delta),
            ));
        }
        let mut m = self.clone();
        m.delta = delta;
        // The orientation depends on the finite-difference step, which scales with δ.
        m.orientation = Arc::new(OnceLock::new());
        Ok(m)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Zero-based index of the genuinely nonlinear field.
    pub fn gnl_index(&self) -> usize {
        self.gnl_index
    }

    /// Physical background state that the shifted origin represents.
    pub fn background(&self) -> &[f64] {
        &self.background
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    /// Default finite-difference step for derivatives of frame quantities.
    pub fn fd_step(&self) -> f64 {
        1e-5 * self.delta
    }

    pub fn flux_matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut buf = vec![0.0; n * n];
        self.dynamics.flux_jacobian(u, &mut buf);
        DMatrix::from_row_slice(n, n, &buf)
    }

    pub fn source_vector(&self, u: &[f64]) -> DVector<f64> {
        let mut buf = vec![0.0; self.dim()];
        self.dynamics.source(u, &mut buf);
        DVector::from_vec(buf)
    }

    /// `d/ds a(u + s dir)|_{s=0}`, analytic when available, else central
    /// differences with step `fd_step / |dir|`.
    pub fn flux_derivative(&self, u: &[f64], dir: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(d) = self.dynamics.flux_jacobian_derivative(u, dir) {
            return Ok(d);
        }
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(DMatrix::zeros(self.dim(), self.dim()));
        }
        let s = self.fd_step() / norm;
        let plus: Vec<f64> = u.iter().zip(dir).map(|(a, d)| a + s * d).collect();
        let minus: Vec<f64> = u.iter().zip(dir).map(|(a, d)| a - s * d).collect();
        self.check_in_ball(&plus, 2.0 * self.delta)?;
        self.check_in_ball(&minus, 2.0 * self.delta)?;
        Ok((self.flux_matrix(&plus) - self.flux_matrix(&minus)) / (2.0 * s))
    }

    /// `Dg(u)`, analytic when available, else central differences.
    pub fn source_jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(d) = self.dynamics.source_jacobian(u) {
            return Ok(d);
        }
        let n = self.dim();
        let h = self.fd_step();
        let mut jac = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut plus = u.to_vec();
            let mut minus = u.to_vec();
            plus[k] += h;
            minus[k] -= h;
            self.check_in_ball(&plus, 2.0 * self.delta)?;
            self.check_in_ball(&minus, 2.0 * self.delta)?;
            let col = (self.source_vector(&plus) - self.source_vector(&minus)) / (2.0 * h);
            jac.set_column(k, &col);
        }
        Ok(jac)
    }

    pub(crate) fn check_in_ball(&self, u: &[f64], radius: f64) -> Result<()> {
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Tiny allowance so that stencils built exactly on the sphere pass.
        if norm > radius * (1.0 + 1e-12) {
            return Err(Error::OutsideBall {
                u: u.to_vec(),
                radius,
            });
        }
        Ok(())
    }

    /// Oriented origin frame, computed once per model.
    pub(crate) fn orientation(&self) -> Result<&Orientation> {
        self.orientation
            .get_or_init(|| spectral::orient_origin(self).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|msg| Error::NotHyperbolic {
                u: vec![0.0; self.dim()],
                reason: msg.clone(),
            })
    }
}

/// Result of checking A1 (real simple eigenvalues at 0), A2 (genuine
/// nonlinearity of field p at 0) and A3 (`g(0) = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a1_ok: bool,
    pub a2_ok: bool,
    pub a3_ok: bool,
    pub eigen_separation: f64,
    pub gnl_value: f64,
    pub g_at_zero_norm: f64,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.a1_ok && self.a2_ok && self.a3_ok
    }
}

pub fn verify_assumptions(model: &SystemModel, tol: f64) -> AssumptionReport {
    verify_assumptions_with(model, tol, GNL_THRESHOLD)
}

pub fn verify_assumptions_with(
    model: &SystemModel,
    tol: f64,
    gnl_threshold: f64,
) -> AssumptionReport {
    let n = model.dim();
    let zero = vec![0.0; n];
    let g_at_zero_norm = model.source_vector(&zero).norm();
    let a3_ok = g_at_zero_norm <= tol;

    let eigen_separation = match spectral::sorted_eigenvalues(&model.flux_matrix(&zero)) {
        Some(_) if n == 1 => f64::INFINITY,
        Some(l) => l
            .as_slice()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min),
        None => 0.0,
    };
    let a1_ok = eigen_separation > tol;

    let gnl_value = if a1_ok {
        spectral::eigenframe(model, &zero)
            .and_then(|frame| {
                let d = spectral::frame_derivatives(model, &zero, model.fd_step())?;
                let p = model.gnl_index();
                Ok(d.dlambda.row(p).transpose().dot(&frame.right.column(p)))
            })
            .unwrap_or(0.0)
    } else {
        0.0
    };
    let a2_ok = a1_ok && gnl_value.abs() > gnl_threshold;

    AssumptionReport {
        a1_ok,
        a2_ok,
        a3_ok,
        eigen_separation,
        gnl_value,
        g_at_zero_norm,
    }
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn check_known(params: &BTreeMap<String, f64>, known: &[&str]) -> Result<()> {
    for key in params.keys() {
        if !known.contains(&key.as_str()) {
            return Err(Error::param(key, format!("not a parameter of this model (expected one of {known:?})")));
        }
    }
    Ok(())
}

fn require(name: &str, value: f64, ok: bool, what: &str) -> Result<f64> {
    if value.is_finite() && ok {
        Ok(value)
    } else {
        Err(Error::param(name, format!("{what}, got {value}")))
    }
}

/// Instantiates a registry model by name.
///
/// | name | params (default) |
/// |---|---|
/// | `burgers` | none |
/// | `burgers_damped` | `beta` (0.1) |
/// | `euler_friction` | `gamma` (2), `rho_bar` (1), `beta` (0.5) |
/// | `relax_2x2` | `tau` (1), `speed` (1) |
pub fn builtin_model(name: &str, params: &BTreeMap<String, f64>) -> Result<SystemModel> {
    match name {
        "burgers" => {
            check_known(params, &[])?;
            SystemModel::new(name, params.clone(), Arc::new(Burgers { beta: 0.0 }), 0.5, 1)
        }
        "burgers_damped" => {
            check_known(params, &["beta"])?;
            let beta = require("beta", param(params, "beta", 0.1), param(params, "beta", 0.1) >= 0.0, "damping rate must be nonnegative")?;
            let mut resolved = params.clone();
            resolved.insert("beta".into(), beta);
            SystemModel::new(name, resolved, Arc::new(Burgers { beta }), 0.5, 1)
        }
        "euler_friction" => {
            check_known(params, &["gamma", "rho_bar", "beta"])?;
            let gamma = param(params, "gamma", 2.0);
            let rho_bar = param(params, "rho_bar", 1.0);
            let beta = param(params, "beta", 0.5);
            require("gamma", gamma, gamma >= 1.0, "adiabatic exponent must be at least 1")?;
            require("rho_bar", rho_bar, rho_bar > 0.0, "background density must be positive")?;
            require("beta", beta, beta >= 0.0, "friction must be nonnegative")?;
            let dynamics = EulerFriction {
                gamma,
                rho_bar,
                beta,
            };
            let resolved: BTreeMap<String, f64> = [
                ("gamma".to_string(), gamma),
                ("rho_bar".to_string(), rho_bar),
                ("beta".to_string(), beta),
            ]
            .into();
            // Hyperbolic while ρ > 0; checked by hand on |u| ≤ ρ̄/2.
            Ok(SystemModel::new(name, resolved, Arc::new(dynamics), rho_bar / 4.0, 2)?
                .with_background(vec![rho_bar, 0.0]))
        }
        "relax_2x2" => {
            check_known(params, &["tau", "speed"])?;
            let tau = param(params, "tau", 1.0);
            let speed = param(params, "speed", 1.0);
            require("tau", tau, tau > 0.0, "relaxation time must be positive")?;
            require("speed", speed, speed > 0.0, "speed must be positive")?;
            let resolved: BTreeMap<String, f64> =
                [("tau".to_string(), tau), ("speed".to_string(), speed)].into();
            // Gap λ2 - λ1 = speed + u2 - u1 ≥ speed/2 on |u| ≤ speed/(2√2).
            let delta = speed / (4.0 * std::f64::consts::SQRT_2);
            SystemModel::new(name, resolved, Arc::new(Relax2x2 { tau, speed }), delta, 1)
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Models used to exercise failure paths and linear transport.
///
/// * `test:transport`: `a(u) = [speed]`, `g ≡ 0` (param `speed`, default 1).
/// * `test:offset_source`: Burgers flux with `g(u) = u + 1`.
/// * `test:repeated`: `a ≡ I₂`, repeated eigenvalue.
pub fn diagnostic_model(name: &str, params: &BTreeMap<String, f64>) -> Result<SystemModel> {
    match name {
        "test:transport" => {
            check_known(params, &["speed"])?;
            let speed = param(params, "speed", 1.0);
            require("speed", speed, true, "speed must be finite")?;
            let resolved: BTreeMap<String, f64> = [("speed".to_string(), speed)].into();
            SystemModel::new(
                name,
                resolved,
                Arc::new(ConstantFlux::new(DMatrix::from_element(1, 1, speed))),
                0.5,
                1,
            )
        }
        "test:offset_source" => {
            check_known(params, &[])?;
            SystemModel::new(name, params.clone(), Arc::new(OffsetSource), 0.5, 1)
        }
        "test:repeated" => {
            check_known(params, &[])?;
            SystemModel::new(
                name,
                params.clone(),
                Arc::new(ConstantFlux::new(DMatrix::identity(2, 2))),
                0.5,
                1,
            )
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Looks a name up in the registry first, then among the diagnostics.
pub fn resolve_model(name: &str, params: &BTreeMap<String, f64>) -> Result<SystemModel> {
    if REGISTRY.contains(&name) {
        builtin_model(name, params)
    } else {
        diagnostic_model(name, params)
    }
}

/// Scalar Burgers with optional linear damping `g(u) = -βu`.
#[derive(Debug, Clone, Copy)]
pub struct Burgers {
    pub beta: f64,
}

impl Dynamics for Burgers {
    fn dim(&self) -> usize {
        1
    }
    fn flux_jacobian(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn source(&self, u: &[f64], out: &mut [f64]) {
        out[0] = -self.beta * u[0];
    }
    fn flux_jacobian_derivative(&self, _u: &[f64], dir: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, dir[0]))
    }
    fn source_jacobian(&self, _u: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, -self.beta))
    }
}

/// `x^e` with the exponents of the default `γ = 2` special-cased.
fn pow(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        x
    } else if e == -1.0 {
        1.0 / x
    } else {
        x.powf(e)
    }
}

/// Isentropic Euler equations with linear friction in primitive variables,
/// shifted to the rest state `(ρ̄, 0)`:
///
/// ```text
/// ρ_t + v ρ_x + ρ v_x = 0
/// v_t + (p'(ρ)/ρ) ρ_x + v v_x = -β v,     p(ρ) = ρ^γ
/// ```
///
/// with state `u = (ρ - ρ̄, v)`.
#[derive(Debug, Clone, Copy)]
pub struct EulerFriction {
    pub gamma: f64,
    pub rho_bar: f64,
    pub beta: f64,
}

impl EulerFriction {
    /// `a` in physical variables `(ρ, v)`.
    pub fn physical_jacobian(&self, rho: f64, v: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[v, rho, self.pressure_slope(rho) / rho, v])
    }

    pub fn physical_source(&self, _rho: f64, v: f64) -> DVector<f64> {
        DVector::from_vec(vec![0.0, -self.beta * v])
    }

    /// `p'(ρ) = γ ρ^{γ-1}`.
    pub fn pressure_slope(&self, rho: f64) -> f64 {
        self.gamma * pow(rho, self.gamma - 1.0)
    }

    /// Sound speed `c(ρ) = sqrt(p'(ρ))`.
    pub fn sound_speed(&self, rho: f64) -> f64 {
        self.pressure_slope(rho).sqrt()
    }
}

impl Dynamics for EulerFriction {
    fn dim(&self) -> usize {
        2
    }
    fn flux_jacobian(&self, u: &[f64], out: &mut [f64]) {
        let rho = self.rho_bar + u[0];
        let v = u[1];
        out[0] = v;
        out[1] = rho;
        out[2] = self.gamma * pow(rho, self.gamma - 2.0);
        out[3] = v;
    }
    fn source(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = -self.beta * u[1];
    }
    fn flux_jacobian_derivative(&self, u: &[f64], dir: &[f64]) -> Option<DMatrix<f64>> {
        let rho = self.rho_bar + u[0];
        let g = self.gamma;
        let d21 = g * (g - 2.0) * pow(rho, g - 3.0);
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[dir[1], dir[0], d21 * dir[0], dir[1]],
        ))
    }
    fn source_jacobian(&self, _u: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -self.beta]))
    }
}

/// A 2×2 relaxation system with a genuinely nonlinear slow field:
///
/// ```text
/// a(u) = [[u1, 1], [0, speed + u2]],   g(u) = ((u2 - u1)/τ, (u1 - u2)/τ)
/// ```
///
/// Field 1 (`λ1 = u1`) is genuinely nonlinear; no physical derivative hook is
/// provided so the finite-difference paths get exercised.
#[derive(Debug, Clone, Copy)]
pub struct Relax2x2 {
    pub tau: f64,
    pub speed: f64,
}

impl Dynamics for Relax2x2 {
    fn dim(&self) -> usize {
        2
    }
    fn flux_jacobian(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
        out[1] = 1.0;
        out[2] = 0.0;
        out[3] = self.speed + u[1];
    }
    fn source(&self, u: &[f64], out: &mut [f64]) {
        let r = (u[1] - u[0]) / self.tau;
        out[0] = r;
        out[1] = -r;
    }
}

/// `a(u) = A` constant, `g ≡ 0`.
#[derive(Debug, Clone)]
pub struct ConstantFlux {
    matrix: DMatrix<f64>,
    row_major: Vec<f64>,
}

impl ConstantFlux {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        assert!(matrix.is_square(), "flux matrix must be square");
        let row_major = matrix.transpose().as_slice().to_vec();
        Self { matrix, row_major }
    }
}

impl Dynamics for ConstantFlux {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn flux_jacobian(&self, _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.row_major);
    }
    fn source(&self, _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn flux_jacobian_derivative(&self, _u: &[f64], _dir: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.dim();
        Some(DMatrix::zeros(n, n))
    }
    fn source_jacobian(&self, _u: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.dim();
        Some(DMatrix::zeros(n, n))
    }
}

/// Burgers flux with `g(u) = u + 1`, which violates `g(0) = 0`.
#[derive(Debug, Clone, Copy)]
struct OffsetSource;

impl Dynamics for OffsetSource {
    fn dim(&self) -> usize {
        1
    }
    fn flux_jacobian(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn source(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[0] + 1.0;
    }
}

/// Convenience: a constant-coefficient model with `g ≡ 0`.
pub fn constant_model(name: &str, matrix: DMatrix<f64>, delta: f64, p: usize) -> Result<SystemModel> {
    SystemModel::new(name, BTreeMap::new(), Arc::new(ConstantFlux::new(matrix)), delta, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn burgers_is_scalar_with_identity_flux() {
        let m = builtin_model("burgers", &no_params()).unwrap();
        assert_eq!(m.dim(), 1);
        assert_eq!(m.delta(), 0.5);
        assert_eq!(m.gnl_index(), 0);
        assert_eq!(m.flux_matrix(&[0.3])[(0, 0)], 0.3);
        assert_eq!(m.source_vector(&[0.3])[0], 0.0);
    }

    #[test]
    fn damped_burgers_source_vanishes_at_origin() {
        let params: BTreeMap<String, f64> = [("beta".to_string(), 0.1)].into();
        let m = builtin_model("burgers_damped", &params).unwrap();
        assert_eq!(m.source_vector(&[0.0])[0], 0.0);
        assert!((m.source_vector(&[0.2])[0] + 0.02).abs() < 1e-15);
    }

    #[test]
    fn euler_sound_speed_at_background() {
        let params: BTreeMap<String, f64> = [
            ("gamma".to_string(), 2.0),
            ("rho_bar".to_string(), 1.0),
            ("beta".to_string(), 0.5),
        ]
        .into();
        let m = builtin_model("euler_friction", &params).unwrap();
        // p = ρ², p' = 2ρ, c(1) = √2.
        let lam = spectral::sorted_eigenvalues(&m.flux_matrix(&[0.0, 0.0])).unwrap();
        let c = 2f64.sqrt();
        assert!((lam[0] + c).abs() < 1e-14);
        assert!((lam[1] - c).abs() < 1e-14);
    }

    #[test]
    fn shifted_origin_matches_physical_background() {
        let e = EulerFriction {
            gamma: 1.4,
            rho_bar: 0.7,
            beta: 0.3,
        };
        let params: BTreeMap<String, f64> = [
            ("gamma".to_string(), 1.4),
            ("rho_bar".to_string(), 0.7),
            ("beta".to_string(), 0.3),
        ]
        .into();
        let m = builtin_model("euler_friction", &params).unwrap();
        let bg = m.background().to_vec();
        assert_eq!(bg, vec![0.7, 0.0]);
        let diff = m.flux_matrix(&[0.0, 0.0]) - e.physical_jacobian(bg[0], bg[1]);
        assert!(diff.amax() < 1e-15);
        let gdiff = m.source_vector(&[0.0, 0.0]) - e.physical_source(bg[0], bg[1]);
        assert!(gdiff.amax() == 0.0);
    }

    #[test]
    fn analytic_flux_derivative_matches_differences() {
        let m = builtin_model("euler_friction", &no_params()).unwrap();
        let e = EulerFriction {
            gamma: 2.0,
            rho_bar: 1.0,
            beta: 0.5,
        };
        let u = [0.05, -0.03];
        let dir = [0.3, 0.7];
        let analytic = e.flux_jacobian_derivative(&u, &dir).unwrap();
        let h = 1e-6;
        let plus = m.flux_matrix(&[u[0] + h * dir[0], u[1] + h * dir[1]]);
        let minus = m.flux_matrix(&[u[0] - h * dir[0], u[1] - h * dir[1]]);
        let fd = (plus - minus) / (2.0 * h);
        assert!((analytic - fd).amax() < 1e-8);
    }

    #[test]
    fn rejects_bad_parameters() {
        let params: BTreeMap<String, f64> = [("rho_bar".to_string(), 0.0)].into();
        assert!(matches!(
            builtin_model("euler_friction", &params),
            Err(Error::InvalidParameter { .. })
        ));
        let params: BTreeMap<String, f64> = [("beta".to_string(), -1.0)].into();
        assert!(builtin_model("burgers_damped", &params).is_err());
        let params: BTreeMap<String, f64> = [("bogus".to_string(), 1.0)].into();
        assert!(builtin_model("burgers", &params).is_err());
        assert!(matches!(
            builtin_model("kdv", &no_params()),
            Err(Error::UnknownModel(_))
        ));
    }

    #[test]
    fn delta_only_shrinks() {
        let m = builtin_model("burgers", &no_params()).unwrap();
        assert!(m.with_delta(0.25).is_ok());
        assert!(m.with_delta(0.75).is_err());
    }

    #[test]
    fn burgers_passes_all_assumptions() {
        let m = builtin_model("burgers", &no_params()).unwrap();
        let r = verify_assumptions(&m, 1e-10);
        assert!(r.a1_ok && r.a2_ok && r.a3_ok);
        assert!((r.gnl_value + 1.0).abs() < 1e-9, "gnl = {}", r.gnl_value);
    }

    #[test]
    fn offset_source_fails_a3() {
        let m = diagnostic_model("test:offset_source", &no_params()).unwrap();
        let r = verify_assumptions(&m, 1e-10);
        assert!(!r.a3_ok);
        assert_eq!(r.g_at_zero_norm, 1.0);
    }

    #[test]
    fn repeated_eigenvalue_fails_a1() {
        let m = diagnostic_model("test:repeated", &no_params()).unwrap();
        let r = verify_assumptions(&m, 1e-10);
        assert!(!r.a1_ok);
        assert!(!r.a2_ok);
    }

    #[test]
    fn registry_models_pass_assumptions() {
        for name in REGISTRY {
            let m = builtin_model(name, &no_params()).unwrap();
            let r = verify_assumptions(&m, 1e-10);
            assert!(r.all_ok(), "{name}: {r:?}");
            assert!(r.gnl_value < 0.0, "{name}: orientation gives {}", r.gnl_value);
        }
    }
}
