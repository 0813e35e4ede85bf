//! Method-of-lines solver for `u_t + a(u) u_x = s g(u)`.
//!
//! Space: 4th-order centered differences of the quasilinear term with zero
//! ghost states, optional 6th-difference dissipation. Time: classic RK4 with
//! `dt = cfl dx / max|λ|`. The grid keeps its spacing and grows at either end
//! to follow the support cone `[a + λ_1(0) t, b + λ_N(0) t]` with 20% slack.
//!
//! Characteristic tracers are advanced inside the same RK4 stages, so the
//! peak characteristic and the strip edges are available at every step.

use std::cell::{RefCell, RefMut};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initialdata::InitialDataSpec;
use crate::model::SystemModel;
use crate::ode::{self, AdaptiveOptions, StopReason};
use crate::spectral;

/// Zero ghost states on each side (the dissipation stencil is 7 wide).
const GHOSTS: usize = 3;
/// Grid growth granularity in cells.
const GROW_CHUNK: usize = 64;
/// Points per parallel work item.
const PAR_CHUNK: usize = 1024;
/// RK4 with 4th-order centered differences is linearly stable up to about
/// 2.06.
pub const MAX_CFL: f64 = 1.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_cells: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub cfl: f64,
    /// Coefficient `σ` of the dissipation `σ Λ/(64 dx) Δ⁶u`; 0 disables it.
    pub dissipation: f64,
    /// Stop once `max|u_x|` exceeds this multiple of its initial value.
    pub gradient_cap: f64,
    /// Also stop once the region where `|u_x| ≥ max|u_x|/2` around the
    /// steepest point spans fewer cells than this (0 disables).
    pub min_front_cells: f64,
}

impl GridConfig {
    pub fn new(n_cells: usize, x_min: f64, x_max: f64) -> Self {
        Self {
            n_cells,
            x_min,
            x_max,
            cfl: 0.5,
            dissipation: 0.0,
            gradient_cap: 1e3,
            min_front_cells: 12.0,
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells < 8 {
            return Err(Error::param("n_cells", format!("need at least 8 cells, got {}", self.n_cells)));
        }
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_max > self.x_min) {
            return Err(Error::param(
                "x_min/x_max",
                format!("need x_min < x_max, got [{}, {}]", self.x_min, self.x_max),
            ));
        }
        if !(self.cfl > 0.0 && self.cfl <= MAX_CFL) {
            return Err(Error::param("cfl", format!("must lie in (0, {MAX_CFL}], got {}", self.cfl)));
        }
        if !(self.dissipation >= 0.0 && self.dissipation.is_finite()) {
            return Err(Error::param("dissipation", format!("must be nonnegative, got {}", self.dissipation)));
        }
        if !(self.min_front_cells >= 0.0 && self.min_front_cells.is_finite()) {
            return Err(Error::param("min_front_cells", format!("must be nonnegative, got {}", self.min_front_cells)));
        }
        if !(self.gradient_cap > 1.0) {
            return Err(Error::param("gradient_cap", format!("must exceed 1, got {}", self.gradient_cap)));
        }
        Ok(())
    }
}

/// A characteristic to follow during the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracerSpec {
    /// Zero-based field index.
    pub family: usize,
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub t_end: f64,
    /// Time between stored snapshots.
    pub snap_every: f64,
    pub source_scale: f64,
    /// Tracers in addition to the default `p`-family ones at the data
    /// support edges and at the bump argmax.
    pub extra_tracers: Vec<TracerSpec>,
    /// Safety bound on the number of time steps.
    pub max_steps: usize,
}

impl RunOptions {
    pub fn new(t_end: f64, source_scale: f64) -> Self {
        Self {
            t_end,
            snap_every: t_end / 100.0,
            source_scale,
            extra_tracers: Vec::new(),
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    GradientBlowup { t_stop: f64 },
    BallExit { t_stop: f64 },
}

impl RunStatus {
    pub fn is_blowup(&self) -> bool {
        matches!(self, RunStatus::GradientBlowup { .. })
    }

    pub fn t_stop(&self) -> Option<f64> {
        match self {
            RunStatus::Completed => None,
            RunStatus::GradientBlowup { t_stop } | RunStatus::BallExit { t_stop } => Some(*t_stop),
        }
    }
}

/// Grid state at one time. Point `j` sits at `x0 + j dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub x0: f64,
    pub dx: f64,
    pub dim: usize,
    /// Point-major: `u[j * dim + c]`.
    pub u: Vec<f64>,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.u.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.dx
    }

    pub fn x_grid(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.x(j)).collect()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.u[j * self.dim..(j + 1) * self.dim]
    }

    /// 4th-order centered `u_x` with zero states beyond the grid.
    pub fn derivative(&self) -> Vec<f64> {
        let mut du = vec![0.0; self.u.len()];
        central_diff(&self.u, self.dim, self.dx, &mut du);
        du
    }

    /// Cubic Lagrange interpolation of `u` at `x` (zero outside the grid).
    pub fn interpolate(&self, x: f64, out: &mut [f64]) {
        interp(&self.u, self.dim, self.x0, self.dx, x, out);
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.len())
            .map(|j| norm(self.state(j)))
            .fold(0.0, f64::max)
    }
}

/// Values recorded along one tracer at every time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerRecord {
    pub family: usize,
    pub x0: f64,
    pub xs: Vec<f64>,
    /// Point-major `u(t, X(t))`.
    pub us: Vec<f64>,
    /// `w_family = l_family(u) u_x` at `X(t)`.
    pub ws: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub model: String,
    pub dim: usize,
    pub grid: GridConfig,
    pub options: RunOptions,
    pub times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub status: RunStatus,
    /// Which stop criterion fired (`gradient_cap`, `front_resolution`,
    /// `ball_exit`, `t_end`).
    pub stop_trigger: String,
    pub source_scale: f64,
    /// Initial support `[a, b]` of the data.
    pub support: [f64; 2],
    /// `[λ_1(0), λ_N(0)]`.
    pub cone_speeds: [f64; 2],
    pub step_times: Vec<f64>,
    /// `max_x |u_x|` at each step time.
    pub max_gradient: Vec<f64>,
    /// `max_x |u|` at each step time.
    pub max_state: Vec<f64>,
    pub tracers: Vec<TracerRecord>,
    /// Indices into `tracers` of the strip edges and the peak
    /// characteristic.
    pub lower_edge: usize,
    pub upper_edge: usize,
    pub peak: usize,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.step_times.last().unwrap_or(&0.0)
    }

    pub fn initial_max_gradient(&self) -> f64 {
        self.max_gradient.first().copied().unwrap_or(0.0)
    }

    /// `(t, W(t))` along the peak `p`-characteristic.
    pub fn peak_series(&self) -> (Vec<f64>, Vec<f64>) {
        (self.step_times.clone(), self.tracers[self.peak].ws.clone())
    }
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn central_diff(u: &[f64], dim: usize, dx: f64, out: &mut [f64]) {
    let n = u.len() / dim;
    let at = |j: isize, c: usize| -> f64 {
        if j < 0 || j as usize >= n {
            0.0
        } else {
            u[j as usize * dim + c]
        }
    };
    let inv = 1.0 / (12.0 * dx);
    for j in 0..n {
        let ji = j as isize;
        for c in 0..dim {
            out[j * dim + c] =
                (at(ji - 2, c) - 8.0 * at(ji - 1, c) + 8.0 * at(ji + 1, c) - at(ji + 2, c)) * inv;
        }
    }
}

/// Width in cells of the connected region around `j` where
/// `|u_x| ≥ max/2`.
fn front_cells(du: &[f64], dim: usize, j: usize, max: f64) -> f64 {
    let n = du.len() / dim;
    if max == 0.0 || n == 0 {
        return f64::INFINITY;
    }
    let g = |k: usize| norm(&du[k * dim..(k + 1) * dim]);
    let mut lo = j;
    while lo > 0 && g(lo - 1) >= 0.5 * max {
        lo -= 1;
    }
    let mut hi = j;
    while hi + 1 < n && g(hi + 1) >= 0.5 * max {
        hi += 1;
    }
    (hi - lo + 1) as f64
}

/// Cubic Lagrange interpolation on the four nearest nodes.
pub(crate) fn interp(u: &[f64], dim: usize, x0: f64, dx: f64, x: f64, out: &mut [f64]) {
    let n = (u.len() / dim) as isize;
    let s = (x - x0) / dx;
    let j = s.floor() as isize;
    let f = s - j as f64;
    let w = [
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ];
    out.fill(0.0);
    for (m, wm) in w.iter().enumerate() {
        let k = j - 1 + m as isize;
        if k >= 0 && k < n {
            for c in 0..dim {
                out[c] += wm * u[k as usize * dim + c];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct StageStats {
    max_speed: f64,
    max_gradient: f64,
    argmax_gradient: usize,
    max_state: f64,
    finite: bool,
    hyperbolic: bool,
}

impl StageStats {
    fn merge(self, o: Self) -> Self {
        Self {
            max_speed: self.max_speed.max(o.max_speed),
            max_gradient: self.max_gradient.max(o.max_gradient),
            argmax_gradient: if o.max_gradient > self.max_gradient {
                o.argmax_gradient
            } else {
                self.argmax_gradient
            },
            max_state: self.max_state.max(o.max_state),
            finite: self.finite && o.finite,
            hyperbolic: self.hyperbolic && o.hyperbolic,
        }
    }
}

struct Solver<'a> {
    model: &'a SystemModel,
    dim: usize,
    dx: f64,
    source_scale: f64,
    dissipation: f64,
    /// Reused copy of the state with zero ghost states on both ends.
    padded: RefCell<Vec<f64>>,
}

impl Solver<'_> {
    fn pad(&self, u: &[f64]) -> RefMut<'_, Vec<f64>> {
        let pad = GHOSTS * self.dim;
        let mut up = self.padded.borrow_mut();
        up.resize(u.len() + 2 * pad, 0.0);
        up[..pad].fill(0.0);
        up[pad..pad + u.len()].copy_from_slice(u);
        up[pad + u.len()..].fill(0.0);
        up
    }

    /// Writes `−a(u) D u + s g(u) (+ dissipation)` into `out` and `D u` into
    /// `du`. Spectral radii are only computed when `want_speed`.
    fn rhs(&self, u: &[f64], out: &mut [f64], du: &mut [f64], want_speed: bool, diss_speed: f64) -> StageStats {
        match self.dim {
            1 => self.rhs_fixed::<1>(u, out, du, want_speed, diss_speed),
            2 => self.rhs_fixed::<2>(u, out, du, want_speed, diss_speed),
            3 => self.rhs_fixed::<3>(u, out, du, want_speed, diss_speed),
            _ => self.rhs_any(u, out, du, want_speed, diss_speed),
        }
    }

    /// Same as `rhs_any` with the state size known at compile time, which
    /// removes the inner loops and most bounds checks.
    fn rhs_fixed<const D: usize>(
        &self,
        u: &[f64],
        out: &mut [f64],
        du: &mut [f64],
        want_speed: bool,
        diss_speed: f64,
    ) -> StageStats {
        let dx = self.dx;
        let inv12 = 1.0 / (12.0 * dx);
        let diss = self.dissipation * diss_speed / (64.0 * dx);
        let dynamics = self.model.dynamics();
        let s = self.source_scale;
        let up = self.pad(u);
        let up = &up[..];
        out.par_chunks_mut(PAR_CHUNK * D)
            .zip(du.par_chunks_mut(PAR_CHUNK * D))
            .enumerate()
            .map(|(chunk, (out_c, du_c))| {
                let mut a = [[0.0; D]; D];
                let mut g = [0.0; D];
                let mut stats = StageStats {
                    finite: true,
                    hyperbolic: true,
                    ..Default::default()
                };
                let start = chunk * PAR_CHUNK;
                // Flat stencil passes over all components vectorise well.
                let base = start * D;
                let m = du_c.len();
                let sh = |k: usize| &up[base + k * D..base + k * D + m];
                for ((((o, a1), a2), a4), a5) in du_c.iter_mut().zip(sh(1)).zip(sh(2)).zip(sh(4)).zip(sh(5)) {
                    *o = (a1 - 8.0 * a2 + 8.0 * a4 - a5) * inv12;
                }
                if diss != 0.0 {
                    let (b0, b1, b2, b3, b4, b5, b6) = (sh(0), sh(1), sh(2), sh(3), sh(4), sh(5), sh(6));
                    for i in 0..m {
                        out_c[i] = diss
                            * (b0[i] - 6.0 * b1[i] + 15.0 * b2[i] - 20.0 * b3[i] + 15.0 * b4[i] - 6.0 * b5[i]
                                + b6[i]);
                    }
                } else {
                    out_c.fill(0.0);
                }
                for (local, (oj, duj)) in out_c.chunks_exact_mut(D).zip(du_c.chunks_exact(D)).enumerate() {
                    let j = start + local;
                    let uj: [f64; D] = up[(j + 3) * D..(j + 4) * D].try_into().unwrap();
                    let d: [f64; D] = duj.try_into().unwrap();
                    dynamics.flux_jacobian(&uj, a.as_flattened_mut());
                    if s != 0.0 {
                        dynamics.source(&uj, &mut g);
                    }
                    for r in 0..D {
                        let mut acc = oj[r];
                        for c in 0..D {
                            acc -= a[r][c] * d[c];
                        }
                        if s != 0.0 {
                            acc += s * g[r];
                        }
                        oj[r] = acc;
                    }
                    if want_speed {
                        match spectral::spectral_radius_row_major(D, a.as_flattened()) {
                            Some(r) => stats.max_speed = stats.max_speed.max(r),
                            None => stats.hyperbolic = false,
                        }
                        let gj = norm(&d);
                        if gj > stats.max_gradient {
                            stats.max_gradient = gj;
                            stats.argmax_gradient = j;
                        }
                        stats.max_state = stats.max_state.max(norm(&uj));
                    }
                    if !oj[0].is_finite() {
                        stats.finite = false;
                    }
                }
                stats
            })
            .reduce(
                || StageStats {
                    finite: true,
                    hyperbolic: true,
                    ..Default::default()
                },
                StageStats::merge,
            )
    }

    fn rhs_any(&self, u: &[f64], out: &mut [f64], du: &mut [f64], want_speed: bool, diss_speed: f64) -> StageStats {
        let dim = self.dim;
        let dx = self.dx;
        let inv12 = 1.0 / (12.0 * dx);
        let diss = self.dissipation * diss_speed / (64.0 * dx);
        let model = self.model;
        let s = self.source_scale;
        // Zero ghost states on both ends so the stencils need no branches.
        let up = self.pad(u);
        let up = &up[..];
        out.par_chunks_mut(PAR_CHUNK * dim)
            .zip(du.par_chunks_mut(PAR_CHUNK * dim))
            .enumerate()
            .map(|(chunk, (out_c, du_c))| {
                let mut a = vec![0.0; dim * dim];
                let mut g = vec![0.0; dim];
                let mut stats = StageStats {
                    finite: true,
                    hyperbolic: true,
                    ..Default::default()
                };
                let start = chunk * PAR_CHUNK;
                let count = out_c.len() / dim;
                for local in 0..count {
                    let j = start + local;
                    // Seven-point neighbourhood u[j-3..=j+3].
                    let nb = &up[j * dim..(j + 7) * dim];
                    let uj = &nb[3 * dim..4 * dim];
                    let duj = &mut du_c[local * dim..(local + 1) * dim];
                    for c in 0..dim {
                        duj[c] = (nb[dim + c] - 8.0 * nb[2 * dim + c] + 8.0 * nb[4 * dim + c]
                            - nb[5 * dim + c])
                            * inv12;
                    }
                    let duj = &du_c[local * dim..(local + 1) * dim];
                    model.dynamics().flux_jacobian(uj, &mut a);
                    if s != 0.0 {
                        model.dynamics().source(uj, &mut g);
                    }
                    let oj = &mut out_c[local * dim..(local + 1) * dim];
                    for r in 0..dim {
                        let row = &a[r * dim..(r + 1) * dim];
                        let mut acc = -row.iter().zip(duj).map(|(x, y)| x * y).sum::<f64>();
                        if s != 0.0 {
                            acc += s * g[r];
                        }
                        if diss != 0.0 {
                            acc += diss
                                * (nb[r] - 6.0 * nb[dim + r] + 15.0 * nb[2 * dim + r] - 20.0 * nb[3 * dim + r]
                                    + 15.0 * nb[4 * dim + r]
                                    - 6.0 * nb[5 * dim + r]
                                    + nb[6 * dim + r]);
                        }
                        oj[r] = acc;
                    }
                    if want_speed {
                        match spectral::spectral_radius_row_major(dim, &a) {
                            Some(r) => stats.max_speed = stats.max_speed.max(r),
                            None => stats.hyperbolic = false,
                        }
                        let gj = norm(duj);
                        if gj > stats.max_gradient {
                            stats.max_gradient = gj;
                            stats.argmax_gradient = j;
                        }
                        stats.max_state = stats.max_state.max(norm(uj));
                    }
                    if !oj[0].is_finite() {
                        stats.finite = false;
                    }
                }
                stats
            })
            .reduce(
                || StageStats {
                    finite: true,
                    hyperbolic: true,
                    ..Default::default()
                },
                StageStats::merge,
            )
    }

    fn tracer_speed(&self, u: &[f64], x0: f64, family: usize, x: f64, buf: &mut [f64]) -> Result<f64> {
        interp(u, self.dim, x0, self.dx, x, buf);
        let lam = spectral::eigenvalues(self.model, buf)?;
        Ok(lam[family])
    }
}

struct Window {
    /// Grid index of point 0 relative to the initial grid.
    left_index: isize,
    u: Vec<f64>,
}

impl Window {
    fn len(&self, dim: usize) -> usize {
        self.u.len() / dim
    }

    fn x0(&self, origin: f64, dx: f64) -> f64 {
        origin + self.left_index as f64 * dx
    }

    fn grow(&mut self, dim: usize, left: usize, right: usize) {
        if left > 0 {
            let mut v = vec![0.0; left * dim];
            v.extend_from_slice(&self.u);
            self.u = v;
            self.left_index -= left as isize;
        }
        if right > 0 {
            self.u.extend(std::iter::repeat_n(0.0, right * dim));
        }
    }
}

/// Runs to `t_end` with snapshots every `t_end/100` and the default tracers.
pub fn simulate(
    model: &SystemModel,
    data: &InitialDataSpec,
    grid: &GridConfig,
    t_end: f64,
    source_scale: f64,
) -> Result<Trajectory> {
    simulate_with(model, data, grid, &RunOptions::new(t_end, source_scale))
}

pub fn simulate_with(
    model: &SystemModel,
    data: &InitialDataSpec,
    grid: &GridConfig,
    opts: &RunOptions,
) -> Result<Trajectory> {
    grid.validate()?;
    if !(opts.t_end > 0.0 && opts.t_end.is_finite()) {
        return Err(Error::param("t_end", format!("must be positive, got {}", opts.t_end)));
    }
    if !(opts.snap_every > 0.0) {
        return Err(Error::param("snap_every", format!("must be positive, got {}", opts.snap_every)));
    }
    if !opts.source_scale.is_finite() {
        return Err(Error::param("source_scale", "must be finite"));
    }
    let dim = model.dim();
    let p = model.gnl_index();
    let dx = grid.dx();
    // Grid points sit at cell centres of the initial window.
    let origin = grid.x_min + 0.5 * dx;
    let half = data.support_half_width();
    if -half < grid.x_min || half > grid.x_max {
        return Err(Error::param(
            "x_min/x_max",
            format!("window [{}, {}] must contain the data support [{}, {}]", grid.x_min, grid.x_max, -half, half),
        ));
    }
    let frame0 = spectral::eigenframe(model, &vec![0.0; dim])?;
    let cone = [frame0.lambdas[0], frame0.lambdas[dim - 1]];

    let mut window = Window {
        left_index: 0,
        u: Vec::with_capacity(grid.n_cells * dim),
    };
    for j in 0..grid.n_cells {
        let u = data.evaluate(origin + j as f64 * dx)?;
        window.u.extend(u.iter());
    }
    let delta = model.delta();

    let mut tracer_specs = vec![
        TracerSpec { family: p, x0: -half },
        TracerSpec { family: p, x0: half },
        TracerSpec {
            family: p,
            x0: data.profile.argmax_z * data.length_scale(),
        },
    ];
    for t in &opts.extra_tracers {
        if t.family >= dim {
            return Err(Error::param("family", format!("tracer family {} out of range", t.family)));
        }
        tracer_specs.push(*t);
    }
    let mut tracers: Vec<TracerRecord> = tracer_specs
        .iter()
        .map(|s| TracerRecord {
            family: s.family,
            x0: s.x0,
            xs: Vec::new(),
            us: Vec::new(),
            ws: Vec::new(),
        })
        .collect();
    let mut xs: Vec<f64> = tracer_specs.iter().map(|s| s.x0).collect();

    let solver = Solver {
        model,
        dim,
        dx,
        source_scale: opts.source_scale,
        dissipation: grid.dissipation,
        padded: RefCell::new(Vec::new()),
    };

    let mut traj = Trajectory {
        model: model.name().to_string(),
        dim,
        grid: grid.clone(),
        options: opts.clone(),
        times: Vec::new(),
        snapshots: Vec::new(),
        status: RunStatus::Completed,
        stop_trigger: String::new(),
        source_scale: opts.source_scale,
        support: [-half, half],
        cone_speeds: cone,
        step_times: Vec::new(),
        max_gradient: Vec::new(),
        max_state: Vec::new(),
        tracers: Vec::new(),
        lower_edge: 0,
        upper_edge: 1,
        peak: 2,
    };

    let mut t = 0.0;
    let mut next_snap = 0.0;
    let mut last_speed = cone[0].abs().max(cone[1].abs());
    let mut initial_gradient = None;
    let mut ubuf = vec![0.0; dim];
    let mut dubuf = vec![0.0; dim];
    let mut k = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut du = Vec::new();
    let mut stage = Vec::new();
    let mut steps = 0usize;
    let t_tol = 1e-12 * opts.t_end;

    loop {
        // Follow the support cone (plus slack) one step ahead.
        let dt_guess = grid.cfl * dx / last_speed.max(1e-300);
        let t_ahead = (t + 2.0 * dt_guess).min(opts.t_end);
        let need_lo = grid.x_min + 1.2 * cone[0].min(0.0) * t_ahead - (GHOSTS + 2) as f64 * dx;
        let need_hi = grid.x_max + 1.2 * cone[1].max(0.0) * t_ahead + (GHOSTS + 2) as f64 * dx;
        let x0 = window.x0(origin, dx);
        let xn = x0 + (window.len(dim) - 1) as f64 * dx;
        let left = if need_lo < x0 {
            (((x0 - need_lo) / dx).ceil() as usize).div_ceil(GROW_CHUNK) * GROW_CHUNK
        } else {
            0
        };
        let right = if need_hi > xn {
            (((need_hi - xn) / dx).ceil() as usize).div_ceil(GROW_CHUNK) * GROW_CHUNK
        } else {
            0
        };
        window.grow(dim, left, right);
        let len = window.u.len();
        for kk in k.iter_mut() {
            kk.resize(len, 0.0);
        }
        du.resize(len, 0.0);
        stage.resize(len, 0.0);
        let x0 = window.x0(origin, dx);

        let stats = solver.rhs(&window.u, &mut k[0], &mut du, true, last_speed);
        if !stats.finite {
            return Err(Error::Numeric {
                t,
                reason: "non-finite state values".into(),
            });
        }
        if !stats.hyperbolic {
            return Err(Error::NotHyperbolic {
                u: vec![],
                reason: format!("complex eigenvalues on the grid at t = {t}"),
            });
        }
        let init_grad = *initial_gradient.get_or_insert(stats.max_gradient);

        // Record step values.
        traj.step_times.push(t);
        traj.max_gradient.push(stats.max_gradient);
        traj.max_state.push(stats.max_state);
        for (rec, &x) in tracers.iter_mut().zip(&xs) {
            interp(&window.u, dim, x0, dx, x, &mut ubuf);
            interp(&du, dim, x0, dx, x, &mut dubuf);
            let w = if norm(&ubuf) <= 2.0 * delta {
                let f = spectral::eigenframe(model, &ubuf)?;
                f.left.row(rec.family).iter().zip(&dubuf).map(|(l, d)| l * d).sum()
            } else {
                f64::NAN
            };
            rec.xs.push(x);
            rec.us.extend_from_slice(&ubuf);
            rec.ws.push(w);
        }

        let front = front_cells(&du, dim, stats.argmax_gradient, stats.max_gradient);
        let growing = init_grad > 0.0 && stats.max_gradient > init_grad;
        let (status, trigger) = if stats.max_state > delta {
            (Some(RunStatus::BallExit { t_stop: t }), "ball_exit")
        } else if init_grad > 0.0 && stats.max_gradient > grid.gradient_cap * init_grad {
            (Some(RunStatus::GradientBlowup { t_stop: t }), "gradient_cap")
        } else if growing && front < grid.min_front_cells {
            (Some(RunStatus::GradientBlowup { t_stop: t }), "front_resolution")
        } else if t >= opts.t_end - t_tol {
            (Some(RunStatus::Completed), "t_end")
        } else {
            (None, "")
        };
        let snap_due = t >= next_snap - t_tol;
        if snap_due || status.is_some() {
            traj.times.push(t);
            traj.snapshots.push(Snapshot {
                t,
                x0,
                dx,
                dim,
                u: window.u.clone(),
            });
            while next_snap <= t + t_tol {
                next_snap += opts.snap_every;
            }
        }
        if let Some(s) = status {
            traj.status = s;
            traj.stop_trigger = trigger.to_string();
            break;
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Numeric {
                t,
                reason: format!("exceeded {} time steps", opts.max_steps),
            });
        }

        last_speed = stats.max_speed.max(1e-12);
        let mut dt = grid.cfl * dx / last_speed;
        let target = next_snap.min(opts.t_end);
        if t + dt > target - t_tol {
            dt = target - t;
        } else if t + 2.0 * dt > target {
            // Split the remainder evenly instead of leaving a sliver.
            dt = 0.5 * (target - t);
        }

        // RK4 for the grid and the tracers together.
        let m = xs.len();
        let mut kx = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        for (i, spec) in tracer_specs.iter().enumerate() {
            kx[0][i] = solver.tracer_speed(&window.u, x0, spec.family, xs[i], &mut ubuf)?;
        }
        let coeffs = [0.5, 0.5, 1.0];
        for s in 1..4 {
            let c = coeffs[s - 1] * dt;
            {
                let (prev, _) = k.split_at(s);
                stage
                    .par_iter_mut()
                    .zip(window.u.par_iter())
                    .zip(prev[s - 1].par_iter())
                    .for_each(|((o, u), kk)| *o = u + c * kk);
            }
            let stage_x: Vec<f64> = (0..m).map(|i| xs[i] + c * kx[s - 1][i]).collect();
            let st = solver.rhs(&stage, &mut k[s], &mut du, false, last_speed);
            if !st.finite {
                return Err(Error::Numeric {
                    t,
                    reason: "non-finite stage values".into(),
                });
            }
            for (i, spec) in tracer_specs.iter().enumerate() {
                kx[s][i] = solver.tracer_speed(&stage, x0, spec.family, stage_x[i], &mut ubuf)?;
            }
        }
        let h6 = dt / 6.0;
        {
            let [k0, k1, k2, k3] = &k;
            window
                .u
                .par_iter_mut()
                .zip(k0.par_iter())
                .zip(k1.par_iter())
                .zip(k2.par_iter().zip(k3.par_iter()))
                .for_each(|(((u, a), b), (c, d))| *u += h6 * (a + 2.0 * b + 2.0 * c + d));
        }
        for i in 0..m {
            xs[i] += h6 * (kx[0][i] + 2.0 * kx[1][i] + 2.0 * kx[2][i] + kx[3][i]);
        }
        t = if (t + dt - target).abs() <= t_tol { target } else { t + dt };
    }
    traj.tracers = tracers;
    Ok(traj)
}

/// Numerical support of each snapshot and its comparison with the cone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportBound {
    pub t: f64,
    /// `None` when no point exceeds the threshold.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub cone_lo: f64,
    pub cone_hi: f64,
    pub margin: f64,
    pub violation: bool,
}

/// Scheme smearing allowance in cells.
pub const CONE_MARGIN_CELLS: f64 = 6.0;

pub fn support_bounds(traj: &Trajectory, threshold: f64) -> Vec<SupportBound> {
    traj.snapshots
        .iter()
        .map(|s| {
            let mut lo = None;
            let mut hi = None;
            for j in 0..s.len() {
                if norm(s.state(j)) > threshold {
                    lo.get_or_insert(s.x(j));
                    hi = Some(s.x(j));
                }
            }
            let cone_lo = traj.support[0] + traj.cone_speeds[0] * s.t;
            let cone_hi = traj.support[1] + traj.cone_speeds[1] * s.t;
            let margin = CONE_MARGIN_CELLS * s.dx;
            let violation = lo.is_some_and(|l| l < cone_lo - margin) || hi.is_some_and(|h| h > cone_hi + margin);
            SupportBound {
                t: s.t,
                lo,
                hi,
                cone_lo,
                cone_hi,
                margin,
                violation,
            }
        })
        .collect()
}

/// Exact characteristic solution of a scalar problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarOracle {
    /// Earliest blow-up over all characteristics, if any before `t_max`.
    pub blowup_time: Option<f64>,
    pub blowup_start: Option<f64>,
    pub starts: Vec<f64>,
    pub t_query: Vec<f64>,
    /// `[query][start]` characteristic position, `u` and `u_x`; NaN after
    /// that characteristic's blow-up.
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub ux: Vec<Vec<f64>>,
}

impl ScalarOracle {
    /// Hermite interpolation of `u` at `x` for query `q`, using the
    /// characteristic feet as nodes. Zero outside the swept interval.
    pub fn u_at(&self, q: usize, x: f64) -> f64 {
        let xs = &self.x[q];
        let n = xs.len();
        if n < 2 || x <= xs[0] || x >= xs[n - 1] {
            return 0.0;
        }
        let k = xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
        let h = xs[k + 1] - xs[k];
        let s = (x - xs[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        self.u[q][k] * (2.0 * s3 - 3.0 * s2 + 1.0)
            + self.ux[q][k] * h * (s3 - 2.0 * s2 + s)
            + self.u[q][k + 1] * (-2.0 * s3 + 3.0 * s2)
            + self.ux[q][k + 1] * h * (s3 - s2)
    }
}

/// Characteristics of a scalar law `u_t + a(u) u_x = s g(u)` from `starts`
/// points spanning the data support. Along each, `X' = a(u)`, `u' = s g(u)`
/// and `v = 1/u_x` obeys `v' = a'(u) − s g'(u) v`, so blow-up is the first
/// zero of `v`.
pub fn scalar_oracle(
    model: &SystemModel,
    data: &InitialDataSpec,
    t_query: &[f64],
    source_scale: f64,
    starts: usize,
    t_max: f64,
) -> Result<ScalarOracle> {
    if model.dim() != 1 {
        return Err(Error::param("model", "the characteristic oracle needs N = 1"));
    }
    if starts < 2 {
        return Err(Error::param("starts", "need at least two characteristics"));
    }
    let half = data.support_half_width();
    let start_x: Vec<f64> = (0..starts)
        .map(|k| -half + 2.0 * half * k as f64 / (starts - 1) as f64)
        .collect();
    let per_start: Vec<CharSolution> = start_x
        .par_iter()
        .map(|&x0| scalar_characteristic(model, data, x0, source_scale, t_query, t_max))
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, usize)> = None;
    for (i, c) in per_start.iter().enumerate() {
        if let Some(tb) = c.blowup {
            if best.is_none_or(|(b, _)| tb < b) {
                best = Some((tb, i));
            }
        }
    }
    // Refine the earliest blow-up over the start position.
    let (blowup_time, blowup_start) = match best {
        Some((_, i)) => {
            let h = 2.0 * half / (starts - 1) as f64;
            let lo = (start_x[i] - h).max(-half);
            let hi = (start_x[i] + h).min(half);
            let f = |x0: f64| {
                scalar_characteristic(model, data, x0, source_scale, &[], t_max)
                    .ok()
                    .and_then(|c| c.blowup)
                    .unwrap_or(f64::INFINITY)
            };
            let (xb, tb) = golden_min(f, lo, hi, 1e-10);
            (Some(tb), Some(xb))
        }
        None => (None, None),
    };
    let nq = t_query.len();
    let mut out = ScalarOracle {
        blowup_time,
        blowup_start,
        starts: start_x,
        t_query: t_query.to_vec(),
        x: vec![Vec::with_capacity(starts); nq],
        u: vec![Vec::with_capacity(starts); nq],
        ux: vec![Vec::with_capacity(starts); nq],
    };
    for c in &per_start {
        for q in 0..nq {
            out.x[q].push(c.x[q]);
            out.u[q].push(c.u[q]);
            out.ux[q].push(c.ux[q]);
        }
    }
    Ok(out)
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x).min(fc).min(fd))
}

struct CharSolution {
    blowup: Option<f64>,
    x: Vec<f64>,
    u: Vec<f64>,
    ux: Vec<f64>,
}

fn scalar_characteristic(
    model: &SystemModel,
    data: &InitialDataSpec,
    x0: f64,
    s: f64,
    t_query: &[f64],
    t_max: f64,
) -> Result<CharSolution> {
    let u0 = data.evaluate(x0)?[0];
    // Chain rule on the data: u_x = ε α'(x) r_p(u).
    let rp = spectral::eigenframe(model, &[u0])?.right[(0, 0)];
    let ux0 = data.initial_wp(x0) * rp;

    let deriv = |u: f64| -> Result<(f64, f64, f64, f64)> {
        let mut a = [0.0];
        let mut g = [0.0];
        model.dynamics().flux_jacobian(&[u], &mut a);
        model.dynamics().source(&[u], &mut g);
        let da = model.flux_derivative(&[u], &[1.0])?[(0, 0)];
        let dg = model.source_jacobian(&[u])?[(0, 0)];
        Ok((a[0], g[0], da, dg))
    };
    let opts = AdaptiveOptions {
        rtol: 1e-12,
        atol: 1e-14,
        h_init: 1e-4,
        ..Default::default()
    };
    let mut tq: Vec<f64> = t_query.to_vec();
    tq.push(t_max);
    let mut blowup = None;
    let mut xs = Vec::with_capacity(t_query.len());
    let mut us = Vec::with_capacity(t_query.len());
    let mut uxs = Vec::with_capacity(t_query.len());

    if ux0 == 0.0 {
        // u_x stays zero; only X and u move.
        let f = |_t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
            let (a, g, _, _) = deriv(y[1])?;
            out[0] = a;
            out[1] = s * g;
            Ok(())
        };
        let mut t = 0.0;
        let mut y = vec![x0, u0];
        for &q in t_query {
            let p = ode::integrate(f, t, &y, q, &opts, |_, _| false)?;
            t = q;
            y = p.last().1.to_vec();
            xs.push(y[0]);
            us.push(y[1]);
            uxs.push(0.0);
        }
        return Ok(CharSolution {
            blowup,
            x: xs,
            u: us,
            ux: uxs,
        });
    }

    let f = |_t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        let (a, g, da, dg) = deriv(y[1])?;
        out[0] = a;
        out[1] = s * g;
        out[2] = da - s * dg * y[2];
        Ok(())
    };
    let v0 = 1.0 / ux0;
    let mut t = 0.0;
    let mut y = vec![x0, u0, v0];
    for (qi, &q) in tq.iter().enumerate() {
        if blowup.is_some() {
            if qi < t_query.len() {
                xs.push(f64::NAN);
                us.push(f64::NAN);
                uxs.push(f64::NAN);
            }
            continue;
        }
        let path = ode::integrate(f, t, &y, q, &opts, |_, yy| yy[2] * v0 <= 0.0)?;
        if path.reason == StopReason::Predicate {
            // Bisect the zero of v inside the last step with single RK4 steps.
            let n = path.ts.len();
            let (ta, ya) = (path.ts[n - 2], path.ys[n - 2].clone());
            let mut lo = 0.0;
            let mut hi = path.ts[n - 1] - ta;
            let mut g = |tt: f64, yy: &[f64], out: &mut [f64]| {
                f(tt, yy, out).expect("model evaluation inside a verified step")
            };
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let ym = ode::rk4_step(&mut g, ta, &ya, mid);
                if ym[2] * v0 > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            blowup = Some(ta + 0.5 * (lo + hi));
            if qi < t_query.len() {
                xs.push(f64::NAN);
                us.push(f64::NAN);
                uxs.push(f64::NAN);
            }
            continue;
        }
        t = q;
        y = path.last().1.to_vec();
        if qi < t_query.len() {
            xs.push(y[0]);
            us.push(y[1]);
            uxs.push(1.0 / y[2]);
        }
    }
    Ok(CharSolution {
        blowup,
        x: xs,
        u: us,
        ux: uxs,
    })
}

/// `u⁰` sampled on the initial grid of `grid` (cell centres).
pub fn initial_grid(data: &InitialDataSpec, grid: &GridConfig) -> Result<Snapshot> {
    let dx = grid.dx();
    let x0 = grid.x_min + 0.5 * dx;
    let mut u = Vec::new();
    let mut dim = 0;
    for j in 0..grid.n_cells {
        let v: DVector<f64> = data.evaluate(x0 + j as f64 * dx)?;
        dim = v.len();
        u.extend(v.iter());
    }
    Ok(Snapshot { t: 0.0, x0, dx, dim, u })
}
