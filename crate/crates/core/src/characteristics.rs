//! Wave components, characteristic tracing and the smallness functionals
//! `J, M, S, Ṽ, W_p^out, V` along a computed trajectory.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients;
use crate::error::{Error, Result};
use crate::evolve::{interp, Snapshot, Trajectory};
use crate::model::SystemModel;
use crate::ode::{self, AdaptiveOptions, StopReason};
use crate::spectral;

/// Largest allowed change of any eigenvalue between consecutive snapshots,
/// relative to the largest speed on the grid.
pub const MAX_SNAPSHOT_LAMBDA_VARIATION: f64 = 0.01;

/// `w_i = l_i(u) u_x` on the grid of every snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveField {
    pub times: Vec<f64>,
    /// `w[s][j * N + i]`.
    pub w: Vec<Vec<f64>>,
    /// `u_x[s][j * N + c]`.
    pub ux: Vec<Vec<f64>>,
    /// Largest `|Σ_i w_i r_i − u_x|` over all points.
    pub reconstruction_residual: f64,
}

fn snapshot_waves(model: &SystemModel, snap: &Snapshot) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = snap.dim;
    let ux = snap.derivative();
    let rows: Vec<(Vec<f64>, f64)> = (0..snap.len())
        .into_par_iter()
        .map(|j| {
            let u = snap.state(j);
            let d = DVector::from_column_slice(&ux[j * n..(j + 1) * n]);
            if d.iter().all(|x| *x == 0.0) && u.iter().all(|x| *x == 0.0) {
                return Ok((vec![0.0; n], 0.0));
            }
            let f = spectral::eigenframe(model, u)?;
            let w = &f.left * &d;
            let back = &f.right * &w;
            Ok((w.iter().copied().collect(), (back - d).amax()))
        })
        .collect::<Result<_>>()?;
    let mut w = Vec::with_capacity(snap.u.len());
    let mut res = 0.0f64;
    for (row, r) in rows {
        w.extend(row);
        res = res.max(r);
    }
    Ok((w, ux, res))
}

pub fn decompose(model: &SystemModel, traj: &Trajectory) -> Result<WaveField> {
    let mut field = WaveField {
        times: traj.times.clone(),
        w: Vec::with_capacity(traj.snapshots.len()),
        ux: Vec::with_capacity(traj.snapshots.len()),
        reconstruction_residual: 0.0,
    };
    for snap in &traj.snapshots {
        let (w, ux, r) = snapshot_waves(model, snap)?;
        field.w.push(w);
        field.ux.push(ux);
        field.reconstruction_residual = field.reconstruction_residual.max(r);
    }
    Ok(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// A characteristic sampled at the snapshot times it crosses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharTrace {
    pub family: usize,
    pub start_t: f64,
    pub start_x: f64,
    pub direction: Direction,
    /// Nodes `(t, X(t))`, ordered in the direction of integration.
    pub path: Vec<(f64, f64)>,
    /// Point-major `u(t, X)` at the nodes.
    pub u: Vec<f64>,
    /// `w_i(t, X)` for all fields, point-major.
    pub w: Vec<f64>,
    /// The trace left the simulated window or time range early.
    pub truncated: bool,
}

impl CharTrace {
    pub fn end(&self) -> (f64, f64) {
        *self.path.last().unwrap()
    }

    /// `w_family` along the path.
    pub fn w_family(&self, dim: usize) -> Vec<f64> {
        (0..self.path.len()).map(|k| self.w[k * dim + self.family]).collect()
    }
}

/// `max_{k,i} |λ_i(u_{k+1}) − λ_i(u_k)|` on the union grid, relative to the
/// largest speed.
pub fn snapshot_lambda_variation(model: &SystemModel, traj: &Trajectory) -> Result<f64> {
    let n = traj.dim;
    let mut worst = 0.0f64;
    for pair in traj.snapshots.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let lo = a.x0.min(b.x0);
        let hi = (a.x(a.len() - 1)).max(b.x(b.len() - 1));
        let dx = a.dx;
        let count = ((hi - lo) / dx).round() as usize + 1;
        let (var, scale) = (0..count)
            .into_par_iter()
            .map(|j| {
                let x = lo + j as f64 * dx;
                let mut ua = vec![0.0; n];
                let mut ub = vec![0.0; n];
                a.interpolate(x, &mut ua);
                b.interpolate(x, &mut ub);
                let la = spectral::eigenvalues(model, &ua)?;
                let lb = spectral::eigenvalues(model, &ub)?;
                Ok(((&la - &lb).amax(), la.amax().max(lb.amax())))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?
            .into_iter()
            .fold((0.0f64, 0.0f64), |acc, v| (acc.0.max(v.0), acc.1.max(v.1)));
        if scale > 0.0 {
            worst = worst.max(var / scale);
        }
    }
    Ok(worst)
}

/// Space-time interpolant: cubic in `x`, linear in `t` between snapshots.
struct SpaceTime<'a> {
    traj: &'a Trajectory,
}

impl SpaceTime<'_> {
    fn eval(&self, k: usize, t: f64, x: f64, out: &mut [f64]) {
        let a = &self.traj.snapshots[k];
        let b = &self.traj.snapshots[k + 1];
        let th = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let n = out.len();
        let mut ub = vec![0.0; n];
        a.interpolate(x, out);
        b.interpolate(x, &mut ub);
        for c in 0..n {
            out[c] = (1.0 - th) * out[c] + th * ub[c];
        }
    }

    fn covers(&self, k: usize, x: f64) -> bool {
        let a = &self.traj.snapshots[k];
        let b = &self.traj.snapshots[k + 1];
        let lo = a.x0.max(b.x0);
        let hi = a.x(a.len() - 1).min(b.x(b.len() - 1));
        x >= lo && x <= hi
    }
}

/// `u` and `w` at a snapshot node.
fn node_values(model: &SystemModel, snap: &Snapshot, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = snap.dim;
    let mut u = vec![0.0; n];
    snap.interpolate(x, &mut u);
    let du = snap.derivative();
    let mut ux = vec![0.0; n];
    interp(&du, n, snap.x0, snap.dx, x, &mut ux);
    let f = spectral::eigenframe(model, &u)?;
    let w = &f.left * DVector::from_vec(ux);
    Ok((u, w.iter().copied().collect()))
}

/// Integrates `dX/dt = λ_family(u(t, X))` through the snapshots, from
/// `(t_start, x_start)` to the end of the trajectory (forward) or to `t = 0`
/// (backward).
pub fn trace(
    model: &SystemModel,
    traj: &Trajectory,
    family: usize,
    t_start: f64,
    x_start: f64,
    direction: Direction,
) -> Result<CharTrace> {
    let n = traj.dim;
    if family >= n {
        return Err(Error::param("family", format!("must be below {n}, got {family}")));
    }
    let times = &traj.times;
    if times.len() < 2 {
        return Err(Error::param("trajectory", "need at least two snapshots to trace"));
    }
    let (t_first, t_last) = (times[0], *times.last().unwrap());
    if !(t_start >= t_first && t_start <= t_last) {
        return Err(Error::param(
            "t_start",
            format!("{t_start} outside the simulated range [{t_first}, {t_last}]"),
        ));
    }
    let variation = snapshot_lambda_variation(model, traj)?;
    if variation >= MAX_SNAPSHOT_LAMBDA_VARIATION {
        return Err(Error::Config(format!(
            "snapshots are too far apart for tracing: eigenvalues change by {:.2}% between consecutive snapshots (limit {:.0}%); store snapshots more often",
            100.0 * variation,
            100.0 * MAX_SNAPSHOT_LAMBDA_VARIATION
        )));
    }
    let st = SpaceTime { traj };
    let opts = AdaptiveOptions {
        rtol: 1e-11,
        atol: 1e-13,
        h_init: 1e-3 * (times[1] - times[0]),
        ..Default::default()
    };
    // Interval containing t_start, chosen so that the first hop goes in the
    // requested direction.
    let mut k = match direction {
        Direction::Forward => times.partition_point(|&t| t <= t_start).saturating_sub(1).min(times.len() - 2),
        Direction::Backward => times.partition_point(|&t| t < t_start).saturating_sub(1).min(times.len() - 2),
    };
    let mut out = CharTrace {
        family,
        start_t: t_start,
        start_x: x_start,
        direction,
        path: vec![(t_start, x_start)],
        u: Vec::new(),
        w: Vec::new(),
        truncated: false,
    };
    let start_vals = {
        let mut u = vec![0.0; n];
        let kk = k.min(times.len() - 2);
        st.eval(kk, t_start, x_start, &mut u);
        let f = spectral::eigenframe(model, &u)?;
        // u_x at an interior time: linear blend of the snapshot derivatives.
        let a = &traj.snapshots[kk];
        let b = &traj.snapshots[kk + 1];
        let th = ((t_start - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let (da, db) = (a.derivative(), b.derivative());
        let mut ua = vec![0.0; n];
        let mut ub = vec![0.0; n];
        interp(&da, n, a.x0, a.dx, x_start, &mut ua);
        interp(&db, n, b.x0, b.dx, x_start, &mut ub);
        let ux: Vec<f64> = (0..n).map(|c| (1.0 - th) * ua[c] + th * ub[c]).collect();
        let w = &f.left * DVector::from_vec(ux);
        (u, w.iter().copied().collect::<Vec<f64>>())
    };
    out.u.extend(start_vals.0);
    out.w.extend(start_vals.1);

    let mut t = t_start;
    let mut x = x_start;
    loop {
        let target = match direction {
            Direction::Forward => times[k + 1],
            Direction::Backward => times[k],
        };
        if target != t {
            if !st.covers(k, x) {
                out.truncated = true;
                break;
            }
            let kk = k;
            let f = |tt: f64, y: &[f64], dydt: &mut [f64]| -> Result<()> {
                if !st.covers(kk, y[0]) {
                    return Err(Error::Numeric {
                        t: tt,
                        reason: "trace left the window".into(),
                    });
                }
                let mut u = vec![0.0; n];
                st.eval(kk, tt, y[0], &mut u);
                dydt[0] = spectral::eigenvalues(model, &u)?[family];
                Ok(())
            };
            let path = ode::integrate(f, t, &[x], target, &opts, |_, _| false)?;
            if path.reason == StopReason::Domain {
                out.truncated = true;
                break;
            }
            x = path.last().1[0];
            t = target;
            let snap_idx = match direction {
                Direction::Forward => k + 1,
                Direction::Backward => k,
            };
            let (u, w) = node_values(model, &traj.snapshots[snap_idx], x)?;
            out.path.push((t, x));
            out.u.extend(u);
            out.w.extend(w);
        }
        match direction {
            Direction::Forward => {
                if k + 2 >= times.len() {
                    break;
                }
                k += 1;
            }
            Direction::Backward => {
                if k == 0 {
                    break;
                }
                k -= 1;
            }
        }
    }
    Ok(out)
}

/// `max |dX/dt − λ_i(u(t, X))|` at interior nodes, with `dX/dt` from
/// centered differences of the path.
pub fn path_defect(model: &SystemModel, trace: &CharTrace, dim: usize) -> Result<f64> {
    let p = &trace.path;
    let mut worst = 0.0f64;
    for k in 1..p.len().saturating_sub(1) {
        let (t0, x0) = p[k - 1];
        let (t2, x2) = p[k + 1];
        let slope = (x2 - x0) / (t2 - t0);
        let lam = spectral::eigenvalues(model, &trace.u[k * dim..(k + 1) * dim])?[trace.family];
        worst = worst.max((slope - lam).abs());
    }
    Ok(worst)
}

/// Smallest separation between traces of one family at common nodes, for
/// traces sorted by start position.
pub fn min_trace_gap(traces: &[CharTrace]) -> f64 {
    let mut gap = f64::INFINITY;
    for pair in traces.windows(2) {
        for ((_, xa), (_, xb)) in pair[0].path.iter().zip(&pair[1].path) {
            gap = gap.min(xb - xa);
        }
    }
    gap
}

/// `d/dt w_i` along the trace (centered differences over the nodes) minus
/// `Σ γ_ijk w_j w_k + s Σ G_ik w_k`. Returns `(t, |residual|)` at interior
/// nodes.
pub fn transport_residual(
    model: &SystemModel,
    trace: &CharTrace,
    source_scale: f64,
) -> Result<Vec<(f64, f64)>> {
    let n = model.dim();
    let i = trace.family;
    let p = &trace.path;
    let mut out = Vec::new();
    for k in 1..p.len().saturating_sub(1) {
        let (ta, tb, tc) = (p[k - 1].0, p[k].0, p[k + 1].0);
        let (wa, wb, wc) = (trace.w[(k - 1) * n + i], trace.w[k * n + i], trace.w[(k + 1) * n + i]);
        // Three-point derivative on a possibly nonuniform grid.
        let h1 = tb - ta;
        let h2 = tc - tb;
        let dwdt = -h2 / (h1 * (h1 + h2)) * wa + (h2 - h1) / (h1 * h2) * wb + h1 / (h2 * (h1 + h2)) * wc;
        let u = &trace.u[k * n..(k + 1) * n];
        let w = &trace.w[k * n..(k + 1) * n];
        let set = coefficients::coefficient_set(model, u)?;
        let rhs = set.gamma.quadratic_form(i, w)
            + source_scale * (0..n).map(|m| set.g[(i, m)] * w[m]).sum::<f64>();
        out.push((tb, (dwdt - rhs).abs()));
    }
    Ok(out)
}

/// Reference bounds `c_J ε`, `c_M ε`, `c_S`, `c_V ε²` for the flags of a
/// [`Lemma3Report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Bounds {
    pub j: f64,
    pub m: f64,
    pub s: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Flags {
    pub j_ok: bool,
    pub m_ok: bool,
    pub s_ok: bool,
    pub v_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Report {
    pub times: Vec<f64>,
    pub j: Vec<f64>,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub v_tilde: Vec<f64>,
    pub w_p_out: Vec<f64>,
    pub v: Vec<f64>,
    pub a_p: Vec<f64>,
    pub b_p: Vec<f64>,
    pub dx: f64,
    pub bounds: Option<Lemma3Bounds>,
    pub flags: Option<Lemma3Flags>,
}

impl Lemma3Report {
    pub fn max_j(&self) -> f64 {
        *self.j.last().unwrap_or(&0.0)
    }
    pub fn max_m(&self) -> f64 {
        *self.m.last().unwrap_or(&0.0)
    }
    pub fn max_v(&self) -> f64 {
        *self.v.last().unwrap_or(&0.0)
    }
}

/// Running suprema at the snapshot times. The strip edges come from the
/// `p`-family tracers started at the data support edges.
pub fn lemma3_quantities(
    model: &SystemModel,
    traj: &Trajectory,
    bounds: Option<Lemma3Bounds>,
) -> Result<Lemma3Report> {
    let field = decompose(model, traj)?;
    lemma3_from_field(model, traj, &field, bounds)
}

pub fn lemma3_from_field(
    model: &SystemModel,
    traj: &Trajectory,
    field: &WaveField,
    bounds: Option<Lemma3Bounds>,
) -> Result<Lemma3Report> {
    let n = traj.dim;
    let p = model.gnl_index();
    let lower = &traj.tracers[traj.lower_edge];
    let upper = &traj.tracers[traj.upper_edge];
    let mut rep = Lemma3Report {
        times: traj.times.clone(),
        j: Vec::new(),
        m: Vec::new(),
        s: Vec::new(),
        v_tilde: Vec::new(),
        w_p_out: Vec::new(),
        v: Vec::new(),
        a_p: Vec::new(),
        b_p: Vec::new(),
        dx: traj.grid.dx(),
        bounds,
        flags: None,
    };
    let (mut j_sup, mut m_sup, mut s_sup, mut vt_sup, mut wo_sup) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut step = 0usize;
    for (si, snap) in traj.snapshots.iter().enumerate() {
        let t = snap.t;
        let k = traj.step_times.partition_point(|&s| s < t);
        if k >= traj.step_times.len() || traj.step_times[k] != t {
            return Err(Error::Numeric {
                t,
                reason: "snapshot time missing from the step record".into(),
            });
        }
        let (a, b) = (lower.xs[k], upper.xs[k]);
        if a < snap.x0 || b > snap.x(snap.len() - 1) {
            return Err(Error::Numeric {
                t,
                reason: format!("strip edges [{a}, {b}] left the window"),
            });
        }
        while step <= k {
            m_sup = m_sup.max(traj.max_state[step]);
            step += 1;
        }
        let w = &field.w[si];
        let wp = |jj: usize| w[jj * n + p].abs();
        // ∫_a^b |w_p| by the trapezoid rule with linear end pieces.
        let ja = ((a - snap.x0) / snap.dx).ceil() as usize;
        let jb = ((b - snap.x0) / snap.dx).floor() as usize;
        let mut integral = 0.0;
        if ja <= jb {
            for jj in ja..jb {
                integral += 0.5 * snap.dx * (wp(jj) + wp(jj + 1));
            }
            let lin = |x: f64| {
                let s = (x - snap.x0) / snap.dx;
                let j0 = (s.floor() as usize).min(snap.len() - 2);
                let f = s - j0 as f64;
                (1.0 - f) * wp(j0) + f * wp(j0 + 1)
            };
            integral += 0.5 * (snap.x(ja) - a) * (lin(a) + wp(ja));
            integral += 0.5 * (b - snap.x(jb)) * (lin(b) + wp(jb));
        }
        j_sup = j_sup.max(integral);
        s_sup = s_sup.max(b - a);
        let band = 0.5 * snap.dx;
        for jj in 0..snap.len() {
            for i in (0..n).filter(|&i| i != p) {
                vt_sup = vt_sup.max(w[jj * n + i].abs());
            }
            let x = snap.x(jj);
            if x < a - band || x > b + band {
                wo_sup = wo_sup.max(wp(jj));
            }
        }
        rep.j.push(j_sup);
        rep.m.push(m_sup);
        rep.s.push(s_sup);
        rep.v_tilde.push(vt_sup);
        rep.w_p_out.push(wo_sup);
        rep.v.push(wo_sup + vt_sup);
        rep.a_p.push(a);
        rep.b_p.push(b);
    }
    if let Some(bd) = bounds {
        rep.flags = Some(Lemma3Flags {
            j_ok: rep.max_j() < bd.j,
            m_ok: rep.max_m() < bd.m,
            s_ok: *rep.s.last().unwrap_or(&0.0) < bd.s,
            v_ok: rep.max_v() < bd.v,
        });
    }
    Ok(rep)
}
