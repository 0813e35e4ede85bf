//! Constant chain and admissibility radius `ν`, the Riccati comparison
//! lifespan, blow-up time estimates from simulations, and `ε/κ` scans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::{self, Lemma3Bounds};
use crate::coefficients::ModelBounds;
use crate::error::{Error, Result};
use crate::evolve::{self, GridConfig, RunOptions, Trajectory};
use crate::initialdata::{BumpProfile, InitialDataSpec};
use crate::model::SystemModel;
use crate::ode::{self, AdaptiveOptions, StopReason};

/// Bisection tolerance for `ν`.
pub const NU_TOL: f64 = 1e-10;
/// Strict inequalities must hold with at least this much room.
pub const STRICT_MARGIN: f64 = 1e-6;
/// Relative agreement required between the closed-form and numeric Riccati
/// lifespans.
pub const RICCATI_RTOL: f64 = 1e-6;

/// One admissibility condition evaluated at some `ν`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `<`, `<=`, `>` or `>=`.
    pub relation: String,
    pub holds: bool,
}

fn check(name: &str, lhs: f64, relation: &str, rhs: f64) -> ConditionCheck {
    let holds = match relation {
        "<" => lhs + STRICT_MARGIN <= rhs,
        "<=" => lhs <= rhs,
        ">" => lhs >= rhs + STRICT_MARGIN,
        ">=" => lhs >= rhs,
        _ => unreachable!("unknown relation {relation}"),
    };
    ConditionCheck {
        name: name.to_string(),
        lhs,
        rhs,
        relation: relation.to_string(),
        holds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantChain {
    pub c_j: f64,
    pub c_v: f64,
    pub c_s: f64,
    pub c_m: f64,
    pub c_w: f64,
    pub t_bar: f64,
    pub q_bar: f64,
    pub nu: f64,
    /// Conditions that fail just above `ν` (empty when `ν` hit its cap of 1).
    pub binding: Vec<String>,
    /// All conditions evaluated at `ν`.
    pub conditions: Vec<ConditionCheck>,
    pub max_dalpha: f64,
    /// `α′(z)` at the bump argmax `z` used for `W(0)`.
    pub dalpha_z: f64,
    pub bounds: ModelBounds,
}

fn inv(x: f64) -> f64 {
    if x.is_infinite() { 0.0 } else { 1.0 / x }
}

/// `ε T_max(ε, κ)`, which does not depend on `ε`. Infinite without blow-up.
fn scaled_riccati_lifespan(gamma0: f64, dalpha_z: f64, g_bar: f64, kappa: f64) -> f64 {
    let a = 0.375 * gamma0 * dalpha_z;
    let b = 2.0 * kappa * g_bar;
    if b == 0.0 {
        1.0 / a
    } else if a <= b {
        f64::INFINITY
    } else {
        -(1.0 - b / a).ln() / b
    }
}

impl ConstantChain {
    /// `Q(ε, κ)`.
    pub fn q(&self, eps: f64, kappa: f64) -> f64 {
        let b = &self.bounds;
        let (t, cv, cs, cj) = (self.t_bar, self.c_v, self.c_s, self.c_j);
        let cl = inv(b.c_lambda);
        3.0 * t * (b.gamma_bar * cv * eps + b.g_bar * kappa)
            + b.gamma_bar * eps * cl * (cj + t * (b.big_gamma_bar * cv * eps + b.g_bar * kappa) * (cv * cs * eps + cj))
            + b.g_bar * kappa * cl * t * eps * (b.big_gamma_bar * (cv * cs * eps + cj) + b.g_bar * cs * kappa)
    }

    /// `T_ε = (3/4) T̄ / ε`.
    pub fn t_eps(&self, eps: f64) -> f64 {
        0.75 * self.t_bar / eps
    }

    /// Lifespan bound of the rescaled problem, `T̄ κ`.
    pub fn t_rescaled(&self, kappa: f64) -> f64 {
        self.t_bar * kappa
    }

    pub fn riccati(&self, eps: f64, kappa: f64) -> RiccatiParams {
        RiccatiParams {
            a_coef: 0.375 * self.bounds.gamma_ppp_0,
            b_coef: 2.0 * eps * kappa * self.bounds.g_bar,
            y0: eps * self.dalpha_z,
        }
    }

    pub fn lemma3_bounds(&self, eps: f64) -> Lemma3Bounds {
        Lemma3Bounds {
            j: self.c_j * eps,
            m: self.c_m * eps,
            s: self.c_s,
            v: self.c_v * eps * eps,
        }
    }

    /// Both parameters within `(0, ν]` (`κ = 0` switches the source off and
    /// is accepted).
    pub fn admissible(&self, eps: f64, kappa: f64) -> bool {
        eps > 0.0 && eps <= self.nu && kappa >= 0.0 && kappa <= self.nu
    }

    /// Every admissibility condition at `nu`.
    pub fn conditions_at(&self, nu: f64) -> Vec<ConditionCheck> {
        let b = &self.bounds;
        let g0 = b.gamma_ppp_0;
        let t = self.t_bar;
        let (cj, cv, cs, cm, cw) = (self.c_j, self.c_v, self.c_s, self.c_m, self.c_w);
        let az = self.dalpha_z;
        vec![
            check("cond1", cm * nu, "<", b.delta),
            check("cond2", 1.0 - b.c_bar * t * cv * nu, ">=", 2.0 / 3.0),
            check(
                "cond3",
                nu * nu * (b.big_gamma_bar * cv * cv * cs * t + b.g_bar * cv * cs * t),
                "<=",
                cj / 8.0,
            ),
            check("cond4", 1.0 - nu * (b.big_gamma_bar * cv * t + b.g_bar * t), ">=", 5.0 / 6.0),
            check("cond5", 1.0 - nu * self.q_bar, ">=", 0.75),
            check("cond6", b.min_gamma_ppp_within(cm * nu), ">", 0.5 * g0),
            check("cond7", 0.5 * g0 - 2.0 * b.gamma_bar * cw * nu, ">", 0.375 * g0),
            check("cond8", nu * cw + 1.0, "<", 2.0),
            check("cond9", 0.1875 * g0 * az - 2.0 * nu * b.g_bar, ">", 0.125 * g0 * az),
            check(
                "cond10",
                scaled_riccati_lifespan(g0, az, b.g_bar, nu),
                "<",
                3.0 / (g0 * az),
            ),
        ]
    }
}

/// Builds the constant chain and bisects for the largest admissible `ν` in
/// `(0, 1]`.
pub fn constant_chain(bounds: &ModelBounds, bump: &BumpProfile) -> Result<ConstantChain> {
    let g0 = bounds.gamma_ppp_0;
    if !(g0 > 0.0) {
        return Err(Error::Orientation(g0));
    }
    let max_dalpha = bump.max_dalpha;
    if !(max_dalpha > 0.0) {
        return Err(Error::param("bump", format!("max α′ must be positive, got {max_dalpha}")));
    }
    let t_bar = 4.0 / (g0 * max_dalpha);
    let c_j = 2.0 * max_dalpha;
    let c_v = 2.0 * bounds.g_bar * inv(bounds.c_lambda) * c_j * (1.0 + bounds.g_bar * t_bar);
    let c_s = 2.0 * bounds.c_bar * (1.0 + c_j * t_bar);
    let c_m = 2.0 * bounds.r_bar * (c_j + c_v * (1.0 + t_bar * (bounds.lambda_n_0 - bounds.lambda1_0)));
    let dalpha_z = bump.derivative(bump.argmax_z);
    let mut chain = ConstantChain {
        c_j,
        c_v,
        c_s,
        c_m,
        c_w: 2.0 * c_v / dalpha_z,
        t_bar,
        q_bar: 0.0,
        nu: 0.0,
        binding: Vec::new(),
        conditions: Vec::new(),
        max_dalpha,
        dalpha_z,
        bounds: bounds.clone(),
    };
    chain.q_bar = chain.q(1.0, 1.0);

    let feasible = |nu: f64| chain.conditions_at(nu).iter().all(|c| c.holds);
    let failing = |nu: f64| -> Vec<String> {
        chain
            .conditions_at(nu)
            .into_iter()
            .filter(|c| !c.holds)
            .map(|c| c.name)
            .collect()
    };
    let (nu, binding) = if feasible(1.0) {
        (1.0, Vec::new())
    } else if !feasible(NU_TOL) {
        (0.0, failing(NU_TOL))
    } else {
        let (mut lo, mut hi) = (NU_TOL, 1.0);
        while hi - lo > NU_TOL {
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, failing(hi))
    };
    chain.nu = nu;
    chain.binding = binding;
    chain.conditions = chain.conditions_at(nu);
    Ok(chain)
}

/// `y′ = a y² − b y`, `y(0) = y0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiParams {
    pub a_coef: f64,
    pub b_coef: f64,
    pub y0: f64,
}

impl RiccatiParams {
    fn validate(&self) -> Result<()> {
        if !(self.a_coef.is_finite() && self.b_coef.is_finite() && self.y0.is_finite()) {
            return Err(Error::param("riccati", "coefficients must be finite"));
        }
        if !(self.a_coef > 0.0) {
            return Err(Error::param("a_coef", format!("must be positive, got {}", self.a_coef)));
        }
        Ok(())
    }

    /// Closed-form blow-up time, `None` when `a y0 ≤ b`.
    pub fn closed_form(&self) -> Result<Option<f64>> {
        self.validate()?;
        let (a, b, y0) = (self.a_coef, self.b_coef, self.y0);
        if a * y0 <= b {
            return Ok(None);
        }
        if b == 0.0 {
            return Ok(Some(1.0 / (a * y0)));
        }
        Ok(Some(-(1.0 - b / (a * y0)).ln() / b))
    }

    /// `y(t)`; infinite at and after the blow-up time.
    pub fn solution(&self, t: f64) -> f64 {
        let (a, b, y0) = (self.a_coef, self.b_coef, self.y0);
        let denom = if b == 0.0 {
            1.0 / y0 - a * t
        } else {
            (1.0 / y0 - a / b) * (b * t).exp() + a / b
        };
        if denom <= 0.0 { f64::INFINITY } else { 1.0 / denom }
    }

    /// Blow-up time from adaptive integration of the ODE itself. Stops once
    /// `y` has grown by `1e8` and adds the remaining `1/(a y)`.
    pub fn numeric(&self, horizon: f64) -> Result<Option<f64>> {
        self.validate()?;
        let (a, b) = (self.a_coef, self.b_coef);
        let cap = 1e8 * self.y0.abs().max(f64::MIN_POSITIVE);
        let f = |_t: f64, y: &[f64], out: &mut [f64]| {
            out[0] = a * y[0] * y[0] - b * y[0];
            Ok(())
        };
        let opts = AdaptiveOptions {
            rtol: 1e-13,
            atol: 1e-300,
            h_init: 1e-3 / (a * self.y0.abs()).max(b).max(1e-300),
            ..Default::default()
        };
        let path = ode::integrate(f, 0.0, &[self.y0], horizon, &opts, |_, y| y[0] >= cap)?;
        if path.reason != StopReason::Predicate {
            return Ok(None);
        }
        let (t, y) = path.last();
        Ok(Some(t + 1.0 / (a * y[0] - b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiLifespan {
    pub params: RiccatiParams,
    /// `None` is the no-blow-up marker.
    pub t_max: Option<f64>,
    pub numeric: Option<f64>,
}

/// Closed-form lifespan, cross-checked against numeric integration.
pub fn riccati_lifespan(params: RiccatiParams) -> Result<RiccatiLifespan> {
    let closed = params.closed_form()?;
    let horizon = match closed {
        Some(t) => 2.0 * t,
        None => 100.0 / (params.a_coef * params.y0.abs()).max(params.b_coef).max(1e-300),
    };
    let numeric = params.numeric(horizon)?;
    match (closed, numeric) {
        (Some(c), Some(n)) if ((c - n) / c).abs() <= RICCATI_RTOL => {}
        (None, None) => {}
        (c, n) => {
            return Err(Error::RiccatiMismatch {
                closed: c.unwrap_or(f64::INFINITY),
                numeric: n.unwrap_or(f64::INFINITY),
            });
        }
    }
    Ok(RiccatiLifespan {
        params,
        t_max: closed,
        numeric,
    })
}

/// Settings of the `1/W` tail fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fraction of the valid samples at the end of the run used in the fit.
    pub tail_fraction: f64,
    pub min_samples: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tail_fraction: 0.3,
            min_samples: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseFit {
    /// Zero of the fitted line; `None` when `1/W` is not decreasing.
    pub t_star: Option<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub samples_used: usize,
    pub t_first: f64,
    pub t_last: f64,
    pub rms_residual: f64,
}

/// Least-squares line through `1/W` on the tail of the valid prefix (finite,
/// positive `W`).
pub fn inverse_fit(ts: &[f64], ws: &[f64], opts: &FitOptions) -> InverseFit {
    let valid = ts
        .iter()
        .zip(ws)
        .take_while(|(t, w)| t.is_finite() && w.is_finite() && **w > 0.0)
        .count();
    let want = ((opts.tail_fraction * valid as f64).ceil() as usize).max(opts.min_samples);
    let used = want.min(valid);
    let empty = InverseFit {
        t_star: None,
        slope: f64::NAN,
        intercept: f64::NAN,
        samples_used: used,
        t_first: f64::NAN,
        t_last: f64::NAN,
        rms_residual: f64::NAN,
    };
    if used < 2 {
        return empty;
    }
    let tail = valid - used..valid;
    let x = &ts[tail.clone()];
    let y: Vec<f64> = ws[tail].iter().map(|w| 1.0 / w).collect();
    let m = used as f64;
    let xm = x.iter().sum::<f64>() / m;
    let ym = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|t| (t - xm) * (t - xm)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(t, v)| (t - xm) * (v - ym)).sum();
    if sxx == 0.0 {
        return empty;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rms = (x
        .iter()
        .zip(&y)
        .map(|(t, v)| (v - intercept - slope * t).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    InverseFit {
        t_star: (slope < 0.0).then(|| -intercept / slope),
        slope,
        intercept,
        samples_used: used,
        t_first: x[0],
        t_last: x[used - 1],
        rms_residual: rms,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    InverseFit,
    Richardson,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub n_cells: usize,
    pub dx: f64,
    pub status: evolve::RunStatus,
    pub stop_trigger: String,
    pub fit: InverseFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsCheck {
    /// `T_ε(ε)` (or `T̄ κ` for the rescaled problem).
    pub t_bound: f64,
    pub t_max: Option<f64>,
    pub below_t_bound: bool,
    pub below_t_max: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupEstimate {
    pub blowup: bool,
    pub t_star: Option<f64>,
    pub ci_width: f64,
    pub method: EstimateMethod,
    pub levels: Vec<LevelResult>,
    pub richardson_order: f64,
    pub bounds_check: Option<BoundsCheck>,
}

impl BlowupEstimate {
    pub fn with_bounds(mut self, t_bound: f64, t_max: Option<f64>) -> Self {
        self.bounds_check = self.t_star.map(|t| BoundsCheck {
            t_bound,
            t_max,
            below_t_bound: t < t_bound,
            below_t_max: t_max.is_none_or(|m| t < m),
        });
        self
    }
}

/// Default order assumed when combining two grid levels. The tail fit stops
/// closer to `T*` on finer grids, and its error shrinks about linearly in
/// `dx` on the reference runs.
pub const DEFAULT_RICHARDSON_ORDER: f64 = 1.0;

/// Combines per-level fits (any order of levels) into one estimate. A run
/// that ended without a blow-up stop on the finest level gives the
/// no-blow-up result.
pub fn estimate_from_runs(runs: &[&Trajectory], fit: &FitOptions, order: f64) -> Result<BlowupEstimate> {
    if runs.is_empty() {
        return Err(Error::param("ladder", "need at least one grid level"));
    }
    let mut levels: Vec<LevelResult> = runs
        .iter()
        .map(|tr| {
            let (ts, ws) = tr.peak_series();
            LevelResult {
                n_cells: tr.grid.n_cells,
                dx: tr.grid.dx(),
                status: tr.status,
                stop_trigger: tr.stop_trigger.clone(),
                fit: inverse_fit(&ts, &ws, fit),
            }
        })
        .collect();
    levels.sort_by(|a, b| b.dx.total_cmp(&a.dx));
    let fine = levels.last().unwrap();
    let mut est = BlowupEstimate {
        blowup: false,
        t_star: None,
        ci_width: 0.0,
        method: EstimateMethod::InverseFit,
        levels: Vec::new(),
        richardson_order: order,
        bounds_check: None,
    };
    if !fine.status.is_blowup() || fine.fit.t_star.is_none() {
        est.levels = levels;
        return Ok(est);
    }
    let tf = fine.fit.t_star.unwrap();
    est.blowup = true;
    est.t_star = Some(tf);
    if levels.len() >= 2 {
        let coarse = &levels[levels.len() - 2];
        if let Some(tc) = coarse.fit.t_star.filter(|_| coarse.status.is_blowup()) {
            let r = coarse.dx / fine.dx;
            est.t_star = Some(tf + (tf - tc) / (r.powf(order) - 1.0));
            est.ci_width = (tf - tc).abs();
            est.method = EstimateMethod::Richardson;
        }
    }
    est.levels = levels;
    Ok(est)
}

/// Runs `data` on every grid of the ladder and estimates the blow-up time.
pub fn estimate_blowup(
    model: &SystemModel,
    data: &InitialDataSpec,
    ladder: &[GridConfig],
    opts: &RunOptions,
    fit: &FitOptions,
) -> Result<BlowupEstimate> {
    let runs: Vec<Trajectory> = ladder
        .iter()
        .map(|g| evolve::simulate_with(model, data, g, opts))
        .collect::<Result<_>>()?;
    let refs: Vec<&Trajectory> = runs.iter().collect();
    estimate_from_runs(&refs, fit, DEFAULT_RICHARDSON_ORDER)
}

/// Blow-up time of a scalar model from the characteristic oracle.
pub fn oracle_estimate(
    model: &SystemModel,
    data: &InitialDataSpec,
    source_scale: f64,
    t_max: f64,
) -> Result<BlowupEstimate> {
    let oracle = evolve::scalar_oracle(model, data, &[], source_scale, 2001, t_max)?;
    Ok(BlowupEstimate {
        blowup: oracle.blowup_time.is_some(),
        t_star: oracle.blowup_time,
        ci_width: 0.0,
        method: EstimateMethod::Oracle,
        levels: Vec::new(),
        richardson_order: 0.0,
        bounds_check: None,
    })
}

/// Settings shared by all rows of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub eps: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Grid ladder, coarse to fine.
    pub cells: Vec<usize>,
    /// Initial window `[-w, w]` in units of the data length scale.
    pub half_width: f64,
    pub cfl: f64,
    pub dissipation: f64,
    pub gradient_cap: f64,
    pub min_front_cells: f64,
    /// `t_end` as a multiple of the lifespan bound.
    pub t_cap_factor: f64,
    /// Snapshots stored per run, spread over the lifespan bound.
    pub snapshots: usize,
    pub rescaled: bool,
    pub fit: FitOptions,
    pub richardson_order: f64,
    /// Support threshold for the cone check, relative to `ε`.
    pub cone_threshold: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.0125, 0.025, 0.05, 0.1],
            kappa: vec![0.1],
            cells: vec![1024, 2560],
            half_width: 0.6,
            cfl: 0.9,
            dissipation: 0.0,
            gradient_cap: 1e3,
            min_front_cells: 12.0,
            t_cap_factor: 1.0,
            snapshots: 100,
            rescaled: false,
            fit: FitOptions::default(),
            richardson_order: DEFAULT_RICHARDSON_ORDER,
            cone_threshold: 1e-5,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.kappa.is_empty() || self.cells.is_empty() {
            return Err(Error::param("scan", "eps, kappa and cells must be non-empty"));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(Error::param("eps", format!("values must lie in (0, 1], got {e}")));
        }
        if let Some(k) = self.kappa.iter().find(|k| !(**k >= 0.0 && **k <= 1.0)) {
            return Err(Error::param("kappa", format!("values must lie in [0, 1], got {k}")));
        }
        if self.rescaled && self.kappa.contains(&0.0) {
            return Err(Error::param("kappa", "the rescaled problem needs κ > 0"));
        }
        if !(self.half_width > 0.5) {
            return Err(Error::param("half_width", format!("must exceed 1/2, got {}", self.half_width)));
        }
        if !(self.t_cap_factor > 0.0) {
            return Err(Error::param("t_cap_factor", "must be positive"));
        }
        if self.snapshots < 2 {
            return Err(Error::param("snapshots", "need at least 2"));
        }
        if !(self.richardson_order > 0.0) {
            return Err(Error::param("richardson_order", "must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self, n_cells: usize, length_scale: f64) -> GridConfig {
        let w = self.half_width * length_scale;
        let mut g = GridConfig::new(n_cells, -w, w);
        g.cfl = self.cfl;
        g.dissipation = self.dissipation;
        g.gradient_cap = self.gradient_cap;
        g.min_front_cells = self.min_front_cells;
        g
    }
}

/// One `(ε, κ)` row of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub eps: f64,
    pub kappa: f64,
    pub blowup: bool,
    pub t_star: Option<f64>,
    pub ci_width: f64,
    pub method: Option<EstimateMethod>,
    /// `T_ε(ε)`, or `T̄ κ` for the rescaled problem.
    pub t_bound: f64,
    /// Riccati comparison lifespan in the time units of the run.
    pub t_max: Option<f64>,
    pub satisfied: bool,
    pub outside_theory: bool,
    pub max_j: f64,
    pub max_m: f64,
    pub max_s: f64,
    pub max_v_tilde: f64,
    pub max_w_p_out: f64,
    pub max_v: f64,
    /// `W(t) ≥ y(t)` at every step before `y` blows up.
    pub riccati_ordering: bool,
    /// `V(t) < ε c_W W(t)` at every snapshot.
    pub v_dominated: bool,
    /// `W(t) > W(0)/2` at every step.
    pub w_lower_bound: bool,
    pub cone_violations: usize,
    pub levels: Vec<LevelResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSlopes {
    pub kappa: f64,
    pub points: usize,
    pub t_star: Option<f64>,
    pub j: Option<f64>,
    pub m: Option<f64>,
    pub v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub model: String,
    pub rows: usize,
    pub failed_rows: usize,
    pub satisfied: usize,
    pub outside_theory: usize,
    pub slopes: Vec<ScanSlopes>,
    pub chain: ConstantChain,
    pub config: ScanConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
    pub summary: ScanSummary,
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum::<f64>() / sxx)
}

/// Relative slack allowed in `W ≥ y` for discretisation error in `W`.
const ORDERING_RTOL: f64 = 1e-3;

fn scan_row(model: &SystemModel, chain: &ConstantChain, bump: &BumpProfile, cfg: &ScanConfig, eps: f64, kappa: f64) -> Result<ScanRow> {
    let data = InitialDataSpec::for_model(model, eps, Some(kappa), cfg.rescaled, *bump)?;
    // Time and space shrink by εκ in the rescaled problem.
    let scale = data.length_scale();
    let t_bound = if cfg.rescaled { chain.t_rescaled(kappa) } else { chain.t_eps(eps) };
    let ric = riccati_lifespan(chain.riccati(eps, kappa))?;
    let t_max = ric.t_max.map(|t| t * scale);
    let mut opts = RunOptions::new(cfg.t_cap_factor * t_bound, data.source_scale());
    opts.snap_every = t_bound / cfg.snapshots as f64;
    let runs: Vec<Trajectory> = cfg
        .cells
        .iter()
        .map(|&n| evolve::simulate_with(model, &data, &cfg.grid(n, scale), &opts))
        .collect::<Result<_>>()?;
    let refs: Vec<&Trajectory> = runs.iter().collect();
    let est = estimate_from_runs(&refs, &cfg.fit, cfg.richardson_order)?;
    let fine = runs
        .iter()
        .min_by(|a, b| a.grid.dx().total_cmp(&b.grid.dx()))
        .unwrap();
    let rep = characteristics::lemma3_quantities(model, fine, Some(chain.lemma3_bounds(eps)))?;

    let (ts, ws) = fine.peak_series();
    let params = chain.riccati(eps, kappa);
    let w0 = ws[0];
    let riccati_ordering = ts.iter().zip(&ws).all(|(t, w)| {
        let y = params.solution(t / scale);
        !y.is_finite() || *w >= y * (1.0 - ORDERING_RTOL)
    });
    let w_lower_bound = ws.iter().all(|w| *w > 0.5 * w0);
    let v_dominated = rep.times.iter().zip(&rep.v).all(|(t, v)| {
        let k = fine.step_times.partition_point(|s| s < t).min(ws.len() - 1);
        *v < eps * chain.c_w * ws[k]
    });
    let threshold = cfg.cone_threshold * eps;
    let cone_violations = runs
        .iter()
        .map(|r| evolve::support_bounds(r, threshold).iter().filter(|b| b.violation).count())
        .sum();
    let satisfied = est.t_star.is_some_and(|t| t < t_bound);
    Ok(ScanRow {
        eps,
        kappa,
        blowup: est.blowup,
        t_star: est.t_star,
        ci_width: est.ci_width,
        method: Some(est.method),
        t_bound,
        t_max,
        satisfied,
        outside_theory: !chain.admissible(eps, kappa),
        max_j: rep.max_j(),
        max_m: rep.max_m(),
        max_s: *rep.s.last().unwrap_or(&0.0),
        max_v_tilde: *rep.v_tilde.last().unwrap_or(&0.0),
        max_w_p_out: *rep.w_p_out.last().unwrap_or(&0.0),
        max_v: rep.max_v(),
        riccati_ordering,
        v_dominated,
        w_lower_bound,
        cone_violations,
        levels: est.levels,
        error: None,
    })
}

fn failed_row(chain: &ConstantChain, cfg: &ScanConfig, eps: f64, kappa: f64, err: &Error) -> ScanRow {
    ScanRow {
        eps,
        kappa,
        blowup: false,
        t_star: None,
        ci_width: f64::NAN,
        method: None,
        t_bound: if cfg.rescaled { chain.t_rescaled(kappa) } else { chain.t_eps(eps) },
        t_max: None,
        satisfied: false,
        outside_theory: !chain.admissible(eps, kappa),
        max_j: f64::NAN,
        max_m: f64::NAN,
        max_s: f64::NAN,
        max_v_tilde: f64::NAN,
        max_w_p_out: f64::NAN,
        max_v: f64::NAN,
        riccati_ordering: false,
        v_dominated: false,
        w_lower_bound: false,
        cone_violations: 0,
        levels: Vec::new(),
        error: Some(err.to_string()),
    }
}

/// Runs every `(ε, κ)` pair (κ outer, ε inner). Rows run concurrently on
/// the current rayon pool; a failing row is recorded and the scan goes on.
pub fn scaling_scan(model: &SystemModel, chain: &ConstantChain, bump: &BumpProfile, cfg: &ScanConfig) -> Result<ScanResult> {
    cfg.validate()?;
    let pairs: Vec<(f64, f64)> = cfg
        .kappa
        .iter()
        .flat_map(|&k| cfg.eps.iter().map(move |&e| (e, k)))
        .collect();
    let rows: Vec<ScanRow> = pairs
        .par_iter()
        .map(|&(e, k)| scan_row(model, chain, bump, cfg, e, k).unwrap_or_else(|err| failed_row(chain, cfg, e, k, &err)))
        .collect();
    let slopes = cfg
        .kappa
        .iter()
        .map(|&k| {
            let sel: Vec<&ScanRow> = rows.iter().filter(|r| r.kappa == k && r.error.is_none()).collect();
            let eps: Vec<f64> = sel.iter().map(|r| r.eps).collect();
            let col = |f: fn(&ScanRow) -> f64| log_log_slope(&eps, &sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            ScanSlopes {
                kappa: k,
                points: sel.len(),
                t_star: col(|r| r.t_star.unwrap_or(f64::NAN)),
                j: col(|r| r.max_j),
                m: col(|r| r.max_m),
                v: col(|r| r.max_v),
            }
        })
        .collect();
    let summary = ScanSummary {
        model: model.name().to_string(),
        rows: rows.len(),
        failed_rows: rows.iter().filter(|r| r.error.is_some()).count(),
        satisfied: rows.iter().filter(|r| r.satisfied).count(),
        outside_theory: rows.iter().filter(|r| r.outside_theory).count(),
        slopes,
        chain: chain.clone(),
        config: cfg.clone(),
    };
    Ok(ScanResult { rows, summary })
}

/// CSV header of [`scan_csv`].
pub const SCAN_CSV_HEADER: [&str; 20] = [
    "eps",
    "kappa",
    "blowup",
    "t_star",
    "ci_width",
    "method",
    "t_bound",
    "t_max",
    "satisfied",
    "outside_theory",
    "max_J",
    "max_M",
    "max_S",
    "max_V_tilde",
    "max_W_p_out",
    "max_V",
    "riccati_ordering",
    "v_dominated",
    "cone_violations",
    "error",
];

/// Scan rows as CSV text.
pub fn scan_csv(rows: &[ScanRow]) -> Result<String> {
    use crate::floats::csv_cell;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCAN_CSV_HEADER)?;
    for r in rows {
        let opt = |v: Option<f64>| v.map_or(String::new(), csv_cell);
        let method = r
            .method
            .map(|m| serde_json::to_value(m).unwrap().as_str().unwrap().to_string())
            .unwrap_or_default();
        w.write_record([
            csv_cell(r.eps),
            csv_cell(r.kappa),
            r.blowup.to_string(),
            opt(r.t_star),
            csv_cell(r.ci_width),
            method,
            csv_cell(r.t_bound),
            opt(r.t_max),
            r.satisfied.to_string(),
            r.outside_theory.to_string(),
            csv_cell(r.max_j),
            csv_cell(r.max_m),
            csv_cell(r.max_s),
            csv_cell(r.max_v_tilde),
            csv_cell(r.max_w_p_out),
            csv_cell(r.max_v),
            r.riccati_ordering.to_string(),
            r.v_dominated.to_string(),
            r.cone_violations.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degenerate_bounds() -> ModelBounds {
        ModelBounds {
            c_bar: 1.0,
            gamma_bar: 1.0,
            big_gamma_bar: 0.0,
            g_bar: 0.0,
            r_bar: 1.0,
            c_lambda: f64::INFINITY,
            lambda1_0: 0.0,
            lambda_n_0: 0.0,
            gamma_ppp_0: 1.0,
            delta: 1.0,
            gamma_ppp_min: vec![[0.0, 1.0]],
            samples: 1,
            seed: 0,
        }
    }

    #[test]
    fn riccati_examples() {
        let t = |a, b, y0| riccati_lifespan(RiccatiParams { a_coef: a, b_coef: b, y0 }).unwrap().t_max;
        assert!((t(1.0, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((t(1.0, 0.5, 1.0).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-14);
        assert_eq!(t(1.0, 2.0, 1.0), None);
        assert!(riccati_lifespan(RiccatiParams { a_coef: 0.0, b_coef: 0.0, y0: 1.0 }).is_err());
    }

    #[test]
    fn riccati_solution_matches_ode() {
        let p = RiccatiParams { a_coef: 0.7, b_coef: 0.2, y0: 0.9 };
        let f = |_t: f64, y: &[f64], out: &mut [f64]| {
            out[0] = p.a_coef * y[0] * y[0] - p.b_coef * y[0];
            Ok(())
        };
        let path = ode::integrate(f, 0.0, &[p.y0], 1.0, &AdaptiveOptions::default(), |_, _| false).unwrap();
        assert!((path.last().1[0] - p.solution(1.0)).abs() < 1e-8);
    }

    #[test]
    fn inverse_fit_recovers_exact_tail() {
        let ts: Vec<f64> = (0..=900).map(|k| k as f64 * 1e-3).collect();
        let ws: Vec<f64> = ts.iter().map(|t| 1.0 / (1.0 - t)).collect();
        let f = inverse_fit(&ts, &ws, &FitOptions::default());
        assert!((f.t_star.unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(f.samples_used, 271);
    }

    #[test]
    fn inverse_fit_without_growth() {
        let ts: Vec<f64> = (0..100).map(|k| k as f64).collect();
        let ws: Vec<f64> = ts.iter().map(|t| (-t).exp()).collect();
        assert!(inverse_fit(&ts, &ws, &FitOptions::default()).t_star.is_none());
    }

    #[test]
    fn degenerate_chain() {
        let mut bump = crate::initialdata::standard_bump();
        bump.max_dalpha = 1.0;
        let c = constant_chain(&degenerate_bounds(), &bump).unwrap();
        assert_eq!(c.c_j, 2.0);
        assert_eq!(c.c_v, 0.0);
        assert_eq!(c.t_bar, 4.0);
        assert_eq!(c.c_s, 2.0 * (1.0 + 2.0 * 4.0));
    }

    #[test]
    fn negative_gamma_aborts() {
        let mut b = degenerate_bounds();
        b.gamma_ppp_0 = -1.0;
        let bump = crate::initialdata::standard_bump();
        assert!(matches!(constant_chain(&b, &bump), Err(Error::Orientation(_))));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 1.5).abs() < 1e-12);
    }
}
