use rayon::prelude::*;
use serde::Serialize;

use super::{mean_se, MonteCarloError, PathBatch, PolicyEstimate};
use crate::model::ProblemSpec;
use crate::solver::SolveResult;

/// Discount factor `exp(-int r)` and discounted running cost accumulated
/// with the trapezoid rule along one path, at every step up to `last`.
pub(super) fn discounting(p: &ProblemSpec, batch: &PathBatch, n: usize, last: usize) -> Result<(Vec<f64>, Vec<f64>), MonteCarloError> {
    let c = &p.coefficients;
    let eval = |s: usize| -> Result<(f64, f64), MonteCarloError> {
        let t = batch.time(s);
        let (x, y) = batch.at(n, s);
        let wrap = |source| MonteCarloError::Eval { t, x, y, source };
        let r = c.r.eval_txy(t, x, y).map_err(wrap)?;
        let f = match &c.running_cost {
            Some(f) => f.eval_txy(t, x, y).map_err(wrap)?,
            None => 0.0,
        };
        Ok((r, f))
    };
    let mut disc = Vec::with_capacity(last + 1);
    let mut run = Vec::with_capacity(last + 1);
    let (mut r0, mut f0) = eval(0)?;
    let (mut int_r, mut acc) = (0.0f64, 0.0f64);
    disc.push(1.0);
    run.push(0.0);
    for s in 1..=last {
        let h = batch.time(s) - batch.time(s - 1);
        let (r1, f1) = eval(s)?;
        let d0 = (-int_r).exp();
        int_r += 0.5 * h * (r0 + r1);
        let d1 = (-int_r).exp();
        acc += 0.5 * h * (d0 * f0 + d1 * f1);
        disc.push(d1);
        run.push(acc);
        (r0, f0) = (r1, f1);
    }
    Ok((disc, run))
}

fn check_match(batch: &PathBatch, res: &SolveResult, p: &ProblemSpec) -> Result<(), MonteCarloError> {
    let g = &res.grid;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
    if !close(batch.horizon, p.horizon) || !close(g.horizon(), p.horizon) {
        return Err(MonteCarloError::SpecMismatch(format!(
            "horizons differ: batch {}, grid {}, problem {}",
            batch.horizon,
            g.horizon(),
            p.horizon
        )));
    }
    let (a, b, c) = (batch.domain, g.domain(), p.domain);
    let same = |u: crate::model::DomainBox, v: crate::model::DomainBox| {
        close(u.x_lo, v.x_lo) && close(u.x_hi, v.x_hi) && close(u.y_lo, v.y_lo) && close(u.y_hi, v.y_hi)
    };
    if !same(a, c) || !same(b, c) {
        return Err(MonteCarloError::SpecMismatch("domains differ".into()));
    }
    if batch.dt > g.dt * (1.0 + 1e-9) {
        return Err(MonteCarloError::SpecMismatch(format!("simulation step {} exceeds the PDE step {}", batch.dt, g.dt)));
    }
    Ok(())
}

/// First step at which the nearest grid node is in the exercise mask, or the
/// last step.
fn stopping_step(batch: &PathBatch, res: &SolveResult, n: usize) -> usize {
    let g = &res.grid;
    for s in 0..batch.n_steps {
        let (x, y) = batch.at(n, s);
        if res.stopped(g.nearest_t(batch.time(s)), g.nearest_x(x), g.nearest_y(y)) {
            return s;
        }
    }
    batch.n_steps
}

/// Value of stopping at the first entry into the solver's exercise set.
/// A lower-bound estimate of `v(start)` up to time-discretisation bias.
pub fn evaluate_policy(batch: &PathBatch, res: &SolveResult, p: &ProblemSpec) -> Result<PolicyEstimate, MonteCarloError> {
    check_match(batch, res, p)?;
    let per_path: Vec<(f64, usize)> = (0..batch.n_paths)
        .into_par_iter()
        .map(|n| {
            let s = stopping_step(batch, res, n);
            let (disc, run) = discounting(p, batch, n, s)?;
            let t = batch.time(s);
            let (x, y) = batch.at(n, s);
            let g = p.gain.at_level(s == batch.n_steps).eval_txy(t, x, y).map_err(|source| MonteCarloError::Eval { t, x, y, source })?;
            Ok((run[s] + disc[s] * g, s))
        })
        .collect::<Result<_, MonteCarloError>>()?;
    let (values, steps): (Vec<f64>, Vec<usize>) = per_path.into_iter().unzip();
    Ok(PolicyEstimate::from_samples(&values, &steps, batch.n_steps, Vec::new()))
}

/// Means of the discounted value process at one checkpoint, stopped at the
/// policy's stopping time and un-stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingalePoint {
    pub time: f64,
    pub step: usize,
    pub stopped_mean: f64,
    pub stopped_se: f64,
    pub unstopped_mean: f64,
    pub unstopped_se: f64,
}

/// Bilinear interpolation of level `k` of the value field, clamped to the box.
fn value_at_level(res: &SolveResult, k: usize, x: f64, y: f64) -> f64 {
    let g = &res.grid;
    let locate = |v: f64, lo: f64, h: f64, n: usize| {
        let s = ((v - lo) / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n.saturating_sub(2));
        (i, s - i as f64)
    };
    let (i, fx) = locate(x, g.x[0], g.hx, g.nx);
    let (j, fy) = if g.ny > 1 { locate(y, g.y[0], g.hy, g.ny) } else { (0, 0.0) };
    let j1 = (j + 1).min(g.ny - 1);
    let v = |ii: usize, jj: usize| res.v(k, ii, jj);
    (1.0 - fx) * ((1.0 - fy) * v(i, j) + fy * v(i, j1)) + fx * ((1.0 - fy) * v(i + 1, j) + fy * v(i + 1, j1))
}

/// `v(t, x, y)`, linear in `t` between levels and bilinear in space.
fn value_at(res: &SolveResult, t: f64, x: f64, y: f64) -> f64 {
    let g = &res.grid;
    let s = ((t - g.t[0]) / g.dt).clamp(0.0, (g.nt - 1) as f64);
    let k = (s.floor() as usize).min(g.nt - 2);
    let w = s - k as f64;
    (1.0 - w) * value_at_level(res, k, x, y) + w * value_at_level(res, k + 1, x, y)
}

/// `Z_s = int_0^s e^{-int r} f + e^{-int_0^s r} v(s, X_s, Y_s)` at each
/// checkpoint, stopped at the first entry into the exercise set and
/// un-stopped. Checkpoints are snapped to the simulation steps.
pub fn martingale_check(
    batch: &PathBatch,
    res: &SolveResult,
    p: &ProblemSpec,
    checkpoints: &[f64],
) -> Result<Vec<MartingalePoint>, MonteCarloError> {
    check_match(batch, res, p)?;
    let steps: Vec<usize> = checkpoints
        .iter()
        .map(|&c| (((c - batch.start.0) / batch.dt).round().max(0.0) as usize).min(batch.n_steps))
        .collect();
    let last = steps.iter().copied().max().unwrap_or(0);
    let z = |n: usize, s: usize, disc: &[f64], run: &[f64]| {
        let (x, y) = batch.at(n, s);
        run[s] + disc[s] * value_at(res, batch.time(s), x, y)
    };
    let per_path: Vec<Vec<(f64, f64)>> = (0..batch.n_paths)
        .into_par_iter()
        .map(|n| {
            let tau = stopping_step(batch, res, n);
            let (disc, run) = discounting(p, batch, n, last)?;
            Ok(steps.iter().map(|&s| (z(n, s.min(tau), &disc, &run), z(n, s, &disc, &run))).collect())
        })
        .collect::<Result<_, MonteCarloError>>()?;
    let mut out = Vec::with_capacity(steps.len());
    for (c, &s) in steps.iter().enumerate() {
        let stopped: Vec<f64> = per_path.iter().map(|v| v[c].0).collect();
        let unstopped: Vec<f64> = per_path.iter().map(|v| v[c].1).collect();
        let (sm, sse) = mean_se(&stopped);
        let (um, use_) = mean_se(&unstopped);
        out.push(MartingalePoint { time: batch.time(s), step: s, stopped_mean: sm, stopped_se: sse, unstopped_mean: um, unstopped_se: use_ });
    }
    Ok(out)
}

/// Value of the solution at a point, for comparisons with path estimates.
pub fn interpolate_value(res: &SolveResult, t: f64, x: f64, y: f64) -> f64 {
    value_at(res, t, x, y)
}
