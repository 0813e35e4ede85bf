//! Small ODE toolbox: classic RK4 steps and an adaptive Dormand–Prince 5(4)
//! integrator with a stop predicate.

use crate::error::{Error, Result};

/// One classic RK4 step of size `h` (may be negative).
pub fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(t, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(t + h, &tmp, &mut k4);
    (0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    /// Largest allowed `|h|`.
    pub h_max: f64,
    /// Give up when `|h|` falls below this.
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 1e-3,
            h_max: f64::INFINITY,
            h_min: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Reached,
    /// The stop predicate fired after the last accepted step.
    Predicate,
    /// The right-hand side reported an error (e.g. left its domain).
    Domain,
}

/// Accepted nodes of an adaptive solve.
#[derive(Debug, Clone)]
pub struct OdePath {
    pub ts: Vec<f64>,
    pub ys: Vec<Vec<f64>>,
    pub reason: StopReason,
}

impl OdePath {
    pub fn last(&self) -> (f64, &[f64]) {
        (*self.ts.last().unwrap(), self.ys.last().unwrap())
    }
}

// Dormand–Prince coefficients. The last row of `A` is the 5th-order
// solution, so the FSAL stage is also the step result.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// `f` returns `Err` when it cannot be evaluated; the solve then halves the
/// step and, once `h_min` is reached, stops with [`StopReason::Domain`].
/// `stop(t, y)` is checked after every accepted step.
pub fn integrate<F, S>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    opts: &AdaptiveOptions,
    mut stop: S,
) -> Result<OdePath>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    S: FnMut(f64, &[f64]) -> bool,
{
    let n = y0.len();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut path = OdePath {
        ts: vec![t0],
        ys: vec![y.clone()],
        reason: StopReason::Reached,
    };
    if t0 == t1 {
        return Ok(path);
    }
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    f(t, &y, &mut k[0])?;
    let mut h = opts.h_init.min(opts.h_max).min((t1 - t0).abs());
    let mut steps = 0;
    while dir * (t1 - t) > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Numeric {
                t,
                reason: format!("adaptive integrator exceeded {} steps", opts.max_steps),
            });
        }
        h = h.min(opts.h_max);
        let reaches_end = h >= (t1 - t).abs();
        if reaches_end {
            h = (t1 - t).abs();
        }
        let hs = dir * h;
        let mut ok = true;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (r, kr) in k.iter().enumerate().take(s) {
                    acc += hs * A[s][r] * kr[i];
                }
                tmp[i] = acc;
            }
            if f(t + C[s] * hs, &tmp, &mut k[s]).is_err() {
                ok = false;
                break;
            }
        }
        if !ok {
            h *= 0.5;
            if h < opts.h_min {
                path.reason = StopReason::Domain;
                return Ok(path);
            }
            continue;
        }
        // tmp now holds the 5th-order solution (FSAL row).
        let mut err = 0.0f64;
        for i in 0..n {
            let y5 = tmp[i];
            let mut y4 = y[i];
            for s in 0..7 {
                y4 += hs * B4[s] * k[s][i];
            }
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5.abs());
            err = err.max(((y5 - y4) / sc).abs());
        }
        if !err.is_finite() {
            h *= 0.25;
            if h < opts.h_min {
                path.reason = StopReason::Domain;
                return Ok(path);
            }
            continue;
        }
        if err <= 1.0 {
            t = if reaches_end { t1 } else { t + hs };
            y.copy_from_slice(&tmp);
            k.swap(0, 6);
            path.ts.push(t);
            path.ys.push(y.clone());
            if stop(t, &y) {
                path.reason = StopReason::Predicate;
                return Ok(path);
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < opts.h_min && t != t1 {
            return Err(Error::Numeric {
                t,
                reason: "adaptive step size underflow".into(),
            });
        }
    }
    Ok(path)
}
