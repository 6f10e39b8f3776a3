//! Deterministic solvers for the truncated system.
//!
//! These are the oracles every Monte Carlo estimate is checked against: a
//! Picard iteration on the mild form, the semi-implicit level scheme solved
//! by the pruned functionals, and the nonnegative comparison equation whose
//! blow-up signals non-integrability of the direct representation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::AbstractSystem;
use crate::value::CVec;

pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e12;
pub const DEFAULT_PICARD_TOL: f64 = 1e-10;
const STIFF_FACTOR: f64 = 0.5;
const PAR_MODES: usize = 64;

/// Values of every mode on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGrid {
    pub dt: f64,
    pub times: Vec<f64>,
    /// Row-major: `values[step * n_modes + mode]`.
    pub values: Vec<CVec>,
    pub n_modes: usize,
    pub converged: bool,
    pub blowup_time: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl TrajectoryGrid {
    fn new(dt: f64, n_steps: usize, n_modes: usize) -> Self {
        Self {
            dt,
            times: (0..=n_steps).map(|j| j as f64 * dt).collect(),
            values: vec![CVec::ZERO; (n_steps + 1) * n_modes],
            n_modes,
            converged: true,
            blowup_time: None,
            iterations: 0,
            residual: 0.0,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn row(&self, step: usize) -> &[CVec] {
        &self.values[step * self.n_modes..(step + 1) * self.n_modes]
    }

    fn row_mut(&mut self, step: usize) -> &mut [CVec] {
        let n = self.n_modes;
        &mut self.values[step * n..(step + 1) * n]
    }

    pub fn value(&self, step: usize, mode: usize) -> CVec {
        self.values[step * self.n_modes + mode]
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("grid has at least one point")
    }

    /// Value at an arbitrary time, linear between grid points.
    pub fn value_at(&self, mode: usize, t: f64) -> Result<CVec> {
        let end = self.final_time();
        if !(t >= 0.0) || t > end * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::Domain(format!("time {t} outside the grid [0, {end}]")));
        }
        let x = (t / self.dt).min(self.n_steps() as f64);
        let j = x.floor() as usize;
        let frac = x - j as f64;
        if j >= self.n_steps() || frac < 1e-9 {
            return Ok(self.value(j.min(self.n_steps()), mode));
        }
        if frac > 1.0 - 1e-9 {
            return Ok(self.value(j + 1, mode));
        }
        Ok(self.value(j, mode) * (1.0 - frac) + self.value(j + 1, mode) * frac)
    }

    pub fn sup_norm(&self, step: usize) -> f64 {
        self.row(step).iter().map(CVec::norm).fold(0.0, f64::max)
    }

    /// Largest `|χ_{-k}(t) - conj χ_k(t)|` over the grid.
    pub fn hermitian_residual(&self, sys: &AbstractSystem) -> f64 {
        let mirrors: Vec<Option<usize>> = (0..self.n_modes).map(|i| sys.mirror(i)).collect();
        let mut worst: f64 = 0.0;
        for step in 0..self.times.len() {
            let row = self.row(step);
            for (i, m) in mirrors.iter().enumerate() {
                match m {
                    Some(j) => worst = worst.max((row[*j] - row[i].conj()).norm()),
                    None => return f64::INFINITY,
                }
            }
        }
        worst
    }
}

/// Levels `0..=N` of the semi-implicit scheme on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeFamily {
    pub levels: Vec<TrajectoryGrid>,
}

impl SchemeFamily {
    pub fn level(&self, n: usize) -> &TrajectoryGrid {
        &self.levels[n]
    }
}

/// Step actually used: at most `dt`, at most `0.5 / max λ`, and dividing
/// `horizon` into a whole number of steps.
pub fn effective_step(sys: &AbstractSystem, horizon: f64, dt: f64) -> Result<(f64, usize)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon must be nonnegative, got {horizon}")));
    }
    if horizon == 0.0 {
        return Ok((dt, 0));
    }
    let target = dt.min(STIFF_FACTOR / sys.max_lambda());
    let n = (horizon / target - 1e-9).ceil().max(1.0) as usize;
    Ok((horizon / n as f64, n))
}

/// `C_f p_k x_k + C_b Σ q B(x_l, y_m)` for every mode.
fn interaction(sys: &AbstractSystem, x: &[CVec], y: &[CVec], out: &mut [CVec]) {
    let one = |k: usize| -> CVec {
        let mut acc = x[k] * (sys.c_f() * sys.p(k));
        let mut nl = CVec::ZERO;
        for e in sys.branches(k) {
            nl += e.op.apply(&x[e.l as usize], &y[e.m as usize]) * e.mass;
        }
        acc += nl * sys.c_b();
        acc
    };
    if out.len() >= PAR_MODES {
        out.par_iter_mut().enumerate().for_each(|(k, o)| *o = one(k));
    } else {
        for (k, o) in out.iter_mut().enumerate() {
            *o = one(k);
        }
    }
}

fn comparison_interaction(sys: &AbstractSystem, x: &[f64], out: &mut [f64]) {
    let one = |k: usize| -> f64 {
        let mut nl = 0.0;
        for e in sys.branches(k) {
            nl += e.mass * x[e.l as usize] * x[e.m as usize];
        }
        sys.c_f() * sys.p(k) * x[k] + sys.c_b() * nl
    };
    if out.len() >= PAR_MODES {
        out.par_iter_mut().enumerate().for_each(|(k, o)| *o = one(k));
    } else {
        for (k, o) in out.iter_mut().enumerate() {
            *o = one(k);
        }
    }
}

/// Fixed-point iteration on the mild form with trapezoidal quadrature.
pub fn solve_mild_picard(
    sys: &AbstractSystem,
    horizon: f64,
    dt: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TrajectoryGrid> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let (dt, n_steps) = effective_step(sys, horizon, dt)?;
    let nm = sys.n_modes();
    let decay: Vec<f64> = (0..nm).map(|k| (-sys.lambda(k) * dt).exp()).collect();
    let mut cur = TrajectoryGrid::new(dt, n_steps, nm);
    for step in 0..=n_steps {
        for k in 0..nm {
            cur.values[step * nm + k] = sys.chi0(k);
        }
    }
    let mut next = cur.clone();
    let mut g = vec![CVec::ZERO; (n_steps + 1) * nm];
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        for step in 0..=n_steps {
            let t = step as f64 * dt;
            let row = cur.row(step);
            let gs = &mut g[step * nm..(step + 1) * nm];
            interaction(sys, row, row, gs);
            for (k, gk) in gs.iter_mut().enumerate() {
                *gk += sys.gamma(k, t) * sys.d(k);
            }
        }
        residual = 0.0;
        for k in 0..nm {
            let lam = sys.lambda(k);
            let mut v = sys.chi0(k);
            next.values[k] = v;
            for step in 0..n_steps {
                let g0 = g[step * nm + k];
                let g1 = g[(step + 1) * nm + k];
                v = v * decay[k] + (g0 * decay[k] + g1) * (0.5 * dt * lam);
                next.values[(step + 1) * nm + k] = v;
            }
        }
        for (a, b) in next.values.iter().zip(&cur.values) {
            residual = residual.max((*a - *b).norm());
        }
        std::mem::swap(&mut cur, &mut next);
        if !residual.is_finite() {
            return Err(Error::NotConverged {
                iterations: iter,
                residual,
            });
        }
        if residual < tol {
            cur.iterations = iter;
            cur.residual = residual;
            cur.converged = true;
            return Ok(cur);
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Cubic Hermite interpolation between two grid values at fraction `s`.
#[inline]
fn hermite(y0: CVec, d0: CVec, y1: CVec, d1: CVec, dt: f64, s: f64) -> CVec {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    y0 * h00 + d0 * (h10 * dt) + y1 * h01 + d1 * (h11 * dt)
}

fn level_rhs(sys: &AbstractSystem, t: f64, x: &[CVec], y: &[CVec], scratch: &mut [CVec], out: &mut [CVec]) {
    interaction(sys, x, y, scratch);
    for k in 0..x.len() {
        let lam = sys.lambda(k);
        out[k] = (scratch[k] - x[k] + sys.gamma(k, t) * sys.d(k)) * lam;
    }
}

/// Levels `0..=n_levels` of `χ^(n)' = λ[-χ^(n) + C_f p χ^(n) + C_b Σ q B(χ^(n)_l, χ^(n-1)_m) + dγ]`,
/// level 0 being pure decay. Each level is advanced by RK4 with the previous
/// level read off the grid by cubic Hermite interpolation.
pub fn solve_semi_implicit(sys: &AbstractSystem, n_levels: usize, horizon: f64, dt: f64) -> Result<SchemeFamily> {
    let (dt, n_steps) = effective_step(sys, horizon, dt)?;
    let nm = sys.n_modes();
    let mut level0 = TrajectoryGrid::new(dt, n_steps, nm);
    let mut deriv_prev = vec![CVec::ZERO; (n_steps + 1) * nm];
    for step in 0..=n_steps {
        let t = step as f64 * dt;
        for k in 0..nm {
            let lam = sys.lambda(k);
            let v = sys.chi0(k) * (-lam * t).exp();
            level0.values[step * nm + k] = v;
            deriv_prev[step * nm + k] = v * (-lam);
        }
    }
    let mut levels = vec![level0];
    let mut scratch = vec![CVec::ZERO; nm];
    let mut mid = vec![CVec::ZERO; nm];
    let mut stage = vec![CVec::ZERO; nm];
    let mut ks: [Vec<CVec>; 4] = std::array::from_fn(|_| vec![CVec::ZERO; nm]);
    for level in 1..=n_levels {
        let prev = levels.last().expect("level 0 exists");
        let mut grid = TrajectoryGrid::new(dt, n_steps, nm);
        let mut deriv = vec![CVec::ZERO; (n_steps + 1) * nm];
        grid.row_mut(0).copy_from_slice(prev.row(0));
        for step in 0..n_steps {
            let t = step as f64 * dt;
            let p0 = prev.row(step);
            let p1 = prev.row(step + 1);
            let d0 = &deriv_prev[step * nm..(step + 1) * nm];
            let d1 = &deriv_prev[(step + 1) * nm..(step + 2) * nm];
            for k in 0..nm {
                mid[k] = hermite(p0[k], d0[k], p1[k], d1[k], dt, 0.5);
            }
            let x0: Vec<CVec> = grid.row(step).to_vec();
            level_rhs(sys, t, &x0, p0, &mut scratch, &mut ks[0]);
            deriv[step * nm..(step + 1) * nm].copy_from_slice(&ks[0]);
            for k in 0..nm {
                stage[k] = x0[k] + ks[0][k] * (0.5 * dt);
            }
            level_rhs(sys, t + 0.5 * dt, &stage, &mid, &mut scratch, &mut ks[1]);
            for k in 0..nm {
                stage[k] = x0[k] + ks[1][k] * (0.5 * dt);
            }
            level_rhs(sys, t + 0.5 * dt, &stage, &mid, &mut scratch, &mut ks[2]);
            for k in 0..nm {
                stage[k] = x0[k] + ks[2][k] * dt;
            }
            level_rhs(sys, t + dt, &stage, p1, &mut scratch, &mut ks[3]);
            let out = grid.row_mut(step + 1);
            let mut worst: f64 = 0.0;
            for k in 0..nm {
                out[k] = x0[k] + (ks[0][k] + ks[1][k] * 2.0 + ks[2][k] * 2.0 + ks[3][k]) * (dt / 6.0);
                let n = out[k].norm();
                worst = if n.is_finite() { worst.max(n) } else { f64::INFINITY };
            }
            if worst > DEFAULT_BLOWUP_THRESHOLD {
                return Err(Error::SchemeUnstable {
                    level,
                    time: t + dt,
                    magnitude: worst,
                });
            }
        }
        let t_end = n_steps as f64 * dt;
        let last: Vec<CVec> = grid.row(n_steps).to_vec();
        level_rhs(sys, t_end, &last, prev.row(n_steps), &mut scratch, &mut ks[0]);
        deriv[n_steps * nm..].copy_from_slice(&ks[0]);
        deriv_prev = deriv;
        levels.push(grid);
    }
    Ok(SchemeFamily { levels })
}

/// RK4 for the nonnegative comparison system, clamped at zero, stopping at
/// the first grid point whose sup-norm exceeds `threshold`.
pub fn solve_comparison(sys: &AbstractSystem, horizon: f64, dt: f64, threshold: f64) -> Result<TrajectoryGrid> {
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!("blow-up threshold must be positive, got {threshold}")));
    }
    let (dt, n_steps) = effective_step(sys, horizon, dt)?;
    let nm = sys.n_modes();
    let mut grid = TrajectoryGrid::new(dt, n_steps, nm);
    let rhs = |t: f64, x: &[f64], scratch: &mut [f64], out: &mut [f64]| {
        comparison_interaction(sys, x, scratch);
        for k in 0..nm {
            out[k] = sys.lambda(k) * (scratch[k] - x[k] + sys.d(k) * sys.gamma(k, t).norm());
        }
    };
    let mut x: Vec<f64> = (0..nm).map(|k| sys.chi0(k).norm()).collect();
    for (k, v) in x.iter().enumerate() {
        grid.values[k] = CVec::real(*v);
    }
    let mut scratch = vec![0.0; nm];
    let mut stage = vec![0.0; nm];
    let mut ks: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; nm]);
    for step in 0..n_steps {
        let t = step as f64 * dt;
        rhs(t, &x, &mut scratch, &mut ks[0]);
        for k in 0..nm {
            stage[k] = x[k] + 0.5 * dt * ks[0][k];
        }
        rhs(t + 0.5 * dt, &stage, &mut scratch, &mut ks[1]);
        for k in 0..nm {
            stage[k] = x[k] + 0.5 * dt * ks[1][k];
        }
        rhs(t + 0.5 * dt, &stage, &mut scratch, &mut ks[2]);
        for k in 0..nm {
            stage[k] = x[k] + dt * ks[2][k];
        }
        rhs(t + dt, &stage, &mut scratch, &mut ks[3]);
        let mut sup: f64 = 0.0;
        for k in 0..nm {
            let v = x[k] + dt / 6.0 * (ks[0][k] + 2.0 * ks[1][k] + 2.0 * ks[2][k] + ks[3][k]);
            x[k] = if v.is_nan() { f64::INFINITY } else { v.max(0.0) };
            sup = sup.max(x[k]);
        }
        let row = grid.row_mut(step + 1);
        for (r, v) in row.iter_mut().zip(&x) {
            *r = CVec::real(*v);
        }
        if !(sup <= threshold) {
            grid.blowup_time = Some(t + dt);
            grid.converged = false;
            grid.times.truncate(step + 2);
            grid.values.truncate((step + 2) * nm);
            break;
        }
    }
    Ok(grid)
}

/// Exact solution `u0 / (u0 + (1 - u0) e^t)` of `u' = -u + u²`.
pub fn logistic_reference(u0: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    let et = t.exp();
    let denom = u0 + (1.0 - u0) * et;
    let scale = u0.abs() + (1.0 - u0).abs() * et;
    if !(denom > 1e-12 * scale) {
        return Err(Error::Domain(format!(
            "the logistic solution from u0 = {u0} does not exist at t = {t}"
        )));
    }
    Ok(u0 / denom)
}

/// Blow-up time `ln(u0 / (u0 - 1))` of the logistic equation, if any.
pub fn logistic_blowup_time(u0: f64) -> Option<f64> {
    (u0 > 1.0).then(|| (u0 / (u0 - 1.0)).ln())
}

/// `u0 exp(-t + u0 (1 - e^{-t}))`, level 1 of the scalar semi-implicit scheme.
pub fn logistic_level_one(u0: f64, t: f64) -> f64 {
    u0 * (-t + u0 * (1.0 - (-t).exp())).exp()
}
