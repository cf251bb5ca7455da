//! Path simulation of the jump-diffusion and probabilistic checks of a
//! solved stopping problem: policy evaluation, martingale checks and a
//! least-squares Monte Carlo oracle.
//!
//! Path `n` draws from a ChaCha8 stream selected by `n` (or `n / 2` for
//! antithetic pairs), so batches do not depend on the thread count.

mod lsm;
mod policy;

use std::io::{self, Write};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprs::EvalError;
use crate::model::{DomainBox, ProblemSpec};

pub use lsm::longstaff_schwartz;
pub use policy::{evaluate_policy, interpolate_value, martingale_check, MartingalePoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error("jump component {0} has infinite or non-finite activity; only compound Poisson jumps can be simulated")]
    InfiniteActivityUnsupported(usize),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("batch and solution do not describe the same problem: {0}")]
    SpecMismatch(String),
    #[error("regression matrix is singular even with a constant basis")]
    SingularRegression,
    #[error("coefficient evaluation failed at (t={t}, x={x}, y={y}): {source}")]
    Eval { t: f64, x: f64, y: f64, source: EvalError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// A path leaving the box is clamped to the face and frozen there.
    #[default]
    Absorb,
    /// A path leaving the box is mirrored back inside and flagged.
    ReflectReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub truncation: Truncation,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { n_paths: 10_000, dt_sim: 1e-3, seed: 1, antithetic: false, truncation: Truncation::Absorb }
    }
}

impl SimConfig {
    /// Checks the config, optionally against the time step of a PDE grid.
    pub fn check(&self, pde_dt: Option<f64>) -> Result<(), MonteCarloError> {
        if self.n_paths < 100 {
            return Err(MonteCarloError::InvalidConfig(format!("n_paths = {} < 100", self.n_paths)));
        }
        if !(self.dt_sim > 0.0 && self.dt_sim.is_finite()) {
            return Err(MonteCarloError::InvalidConfig(format!("dt_sim = {}", self.dt_sim)));
        }
        if let Some(dt) = pde_dt {
            if self.dt_sim > dt * (1.0 + 1e-9) {
                return Err(MonteCarloError::InvalidConfig(format!("dt_sim = {} exceeds the PDE step {dt}", self.dt_sim)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub component: u32,
    pub atom: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitKind {
    /// Left the box (absorbed or reflected, depending on the config).
    Boundary,
    /// A coefficient or state became non-finite; the path is frozen.
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathExit {
    /// First step index at which the flag was raised.
    pub step: usize,
    pub kind: ExitKind,
}

/// Simulated states on the uniform simulation time grid.
///
/// `x` and `y` are stored path-major: entry `n * (n_steps + 1) + s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBatch {
    pub start: (f64, f64, f64),
    pub horizon: f64,
    pub domain: DomainBox,
    pub n_paths: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub jumps: Vec<Vec<JumpEvent>>,
    pub exits: Vec<Option<PathExit>>,
    pub config: SimConfig,
}

impl PathBatch {
    #[inline]
    pub fn at(&self, n: usize, s: usize) -> (f64, f64) {
        let q = n * (self.n_steps + 1) + s;
        (self.x[q], self.y[q])
    }

    pub fn time(&self, s: usize) -> f64 {
        if s == self.n_steps {
            self.horizon
        } else {
            self.start.0 + s as f64 * self.dt
        }
    }

    pub fn mean_jump_count(&self) -> f64 {
        self.jumps.iter().map(Vec::len).sum::<usize>() as f64 / self.n_paths as f64
    }

    /// Writes the batch as fixed-width little-endian records.
    ///
    /// Header: magic `b"SSPATHS1"`, then `n_paths`, `n_steps` as `u64`, then
    /// `t0, x0, y0, horizon, dt` as `f64`. One record per path follows:
    /// `exit_step: i64` (-1 when none), `exit_kind: u8` (0 none, 1 boundary,
    /// 2 non-finite), `n_jumps: u64`, `(x, y)` as `f64` pairs for every step,
    /// then per jump `time: f64, component: u32, atom: u32`.
    pub fn write_records(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(b"SSPATHS1")?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.n_steps as u64).to_le_bytes())?;
        for v in [self.start.0, self.start.1, self.start.2, self.horizon, self.dt] {
            w.write_all(&v.to_le_bytes())?;
        }
        for n in 0..self.n_paths {
            let (step, kind) = match self.exits[n] {
                None => (-1i64, 0u8),
                Some(e) => (e.step as i64, if e.kind == ExitKind::Boundary { 1 } else { 2 }),
            };
            w.write_all(&step.to_le_bytes())?;
            w.write_all(&[kind])?;
            w.write_all(&(self.jumps[n].len() as u64).to_le_bytes())?;
            for s in 0..=self.n_steps {
                let (x, y) = self.at(n, s);
                w.write_all(&x.to_le_bytes())?;
                w.write_all(&y.to_le_bytes())?;
            }
            for ev in &self.jumps[n] {
                w.write_all(&ev.time.to_le_bytes())?;
                w.write_all(&ev.component.to_le_bytes())?;
                w.write_all(&ev.atom.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Mean and standard error of a policy value, with the distribution of
/// stopping steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
    /// Number of paths stopped at each simulation step.
    pub stop_histogram: Vec<usize>,
    pub notes: Vec<String>,
}

impl PolicyEstimate {
    fn from_samples(samples: &[f64], stop_steps: &[usize], n_steps: usize, notes: Vec<String>) -> PolicyEstimate {
        let (mean, std_err) = mean_se(samples);
        let mut stop_histogram = vec![0; n_steps + 1];
        for &s in stop_steps {
            stop_histogram[s] += 1;
        }
        PolicyEstimate { mean, std_err, n_paths: samples.len(), stop_histogram, notes }
    }
}

/// Sample mean and `std / sqrt(n)`, summed in index order.
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Sampler<'a> {
    p: &'a ProblemSpec,
    poisson: Vec<Option<Poisson<f64>>>,
    pick: Vec<Option<WeightedIndex<f64>>>,
    small: Vec<Vec<bool>>,
}

impl<'a> Sampler<'a> {
    fn new(p: &'a ProblemSpec, dt: f64) -> Result<Sampler<'a>, MonteCarloError> {
        let mut poisson = Vec::new();
        let mut pick = Vec::new();
        let mut small = Vec::new();
        for (c, jc) in p.jumps.iter().enumerate() {
            let mass = jc.total_mass();
            if !mass.is_finite() || jc.atoms.iter().any(|a| !(a.weight >= 0.0 && a.weight.is_finite())) {
                return Err(MonteCarloError::InfiniteActivityUnsupported(c));
            }
            if mass > 0.0 {
                let lam = Poisson::new(mass * dt).map_err(|e| MonteCarloError::InvalidConfig(e.to_string()))?;
                let w = WeightedIndex::new(jc.atoms.iter().map(|a| a.weight)).map_err(|e| MonteCarloError::InvalidConfig(e.to_string()))?;
                poisson.push(Some(lam));
                pick.push(Some(w));
            } else {
                poisson.push(None);
                pick.push(None);
            }
            let s = if jc.compensate_small_jumps {
                jc.atoms
                    .iter()
                    .map(|a| jc.gamma_bar_at(a).map(|g| g < 1.0))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|source| MonteCarloError::Eval { t: f64::NAN, x: f64::NAN, y: f64::NAN, source })?
            } else {
                vec![false; jc.atoms.len()]
            };
            small.push(s);
        }
        Ok(Sampler { p, poisson, pick, small })
    }

    /// Drift, the Cholesky factor of the diffusion covariance per unit time
    /// and the small-jump compensation, at one state.
    fn local(&self, t: f64, x: f64, y: f64) -> Result<([f64; 2], [f64; 3]), EvalError> {
        let c = &self.p.coefficients;
        let mut drift = [c.alpha1.eval_txy(t, x, y)?, c.alpha2.eval_txy(t, x, y)?];
        let b1 = c.beta1.eval_txy(t, x, y)?;
        let b2 = c.beta2.eval_txy(t, x, y)?;
        let bb = c.beta_bar(b1, b2);
        let l11 = (2.0 * b1).max(0.0).sqrt();
        let l21 = if l11 > 0.0 { 2.0 * bb / l11 } else { 0.0 };
        let l22 = (2.0 * b2 - l21 * l21).max(0.0).sqrt();
        for (c, jc) in self.p.jumps.iter().enumerate() {
            for (m, a) in jc.atoms.iter().enumerate() {
                if self.small[c][m] {
                    let (g1, g2) = jc.gamma_at(t, x, y, a)?;
                    drift[0] -= a.weight * g1;
                    drift[1] -= a.weight * g2;
                }
            }
        }
        Ok((drift, [l11, l21, l22]))
    }
}

/// Euler scheme with compound Poisson jumps from `start` to the horizon.
pub fn simulate_paths(p: &ProblemSpec, start: (f64, f64, f64), cfg: &SimConfig) -> Result<PathBatch, MonteCarloError> {
    cfg.check(None)?;
    let (t0, x0, y0) = start;
    if !(t0 < p.horizon) {
        return Err(MonteCarloError::InvalidConfig(format!("start time {t0} is not before the horizon {}", p.horizon)));
    }
    let n_steps = ((p.horizon - t0) / cfg.dt_sim - 1e-9).ceil().max(1.0) as usize;
    let dt = (p.horizon - t0) / n_steps as f64;
    let sampler = Sampler::new(p, dt)?;
    let d = p.domain;
    let width = n_steps + 1;

    let paths: Vec<(Vec<f64>, Vec<f64>, Vec<JumpEvent>, Option<PathExit>)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|n| {
            let (stream, sign) = if cfg.antithetic { ((n / 2) as u64, if n % 2 == 0 { 1.0 } else { -1.0 }) } else { (n as u64, 1.0) };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream);
            let mut xs = Vec::with_capacity(width);
            let mut ys = Vec::with_capacity(width);
            let mut log = Vec::new();
            let mut exit: Option<PathExit> = None;
            let (mut x, mut y) = (x0, y0);
            let mut frozen = false;
            xs.push(x);
            ys.push(y);
            for s in 0..n_steps {
                let t = t0 + s as f64 * dt;
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                if !frozen {
                    let (nx, ny) = step(&sampler, &mut rng, t, dt, (x, y), (sign * z1, sign * z2), &mut log)
                        .map_err(|source| MonteCarloError::Eval { t, x, y, source })?;
                    if !(nx.is_finite() && ny.is_finite()) {
                        exit = Some(PathExit { step: s + 1, kind: ExitKind::NonFinite });
                        frozen = true;
                    } else {
                        (x, y) = (nx, ny);
                        if !d_contains(&d, x, y) {
                            exit.get_or_insert(PathExit { step: s + 1, kind: ExitKind::Boundary });
                            match cfg.truncation {
                                Truncation::Absorb => {
                                    x = x.clamp(d.x_lo, d.x_hi);
                                    y = y.clamp(d.y_lo, d.y_hi);
                                    frozen = true;
                                }
                                Truncation::ReflectReport => {
                                    x = reflect(x, d.x_lo, d.x_hi);
                                    y = reflect(y, d.y_lo, d.y_hi);
                                }
                            }
                        }
                    }
                }
                xs.push(x);
                ys.push(y);
            }
            Ok((xs, ys, log, exit))
        })
        .collect::<Result<_, MonteCarloError>>()?;

    let mut batch = PathBatch {
        start,
        horizon: p.horizon,
        domain: d,
        n_paths: cfg.n_paths,
        n_steps,
        dt,
        x: Vec::with_capacity(cfg.n_paths * width),
        y: Vec::with_capacity(cfg.n_paths * width),
        jumps: Vec::with_capacity(cfg.n_paths),
        exits: Vec::with_capacity(cfg.n_paths),
        config: *cfg,
    };
    for (xs, ys, log, exit) in paths {
        batch.x.extend(xs);
        batch.y.extend(ys);
        batch.jumps.push(log);
        batch.exits.push(exit);
    }
    Ok(batch)
}

fn d_contains(d: &DomainBox, x: f64, y: f64) -> bool {
    x >= d.x_lo && x <= d.x_hi && y >= d.y_lo && y <= d.y_hi
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if w <= 0.0 {
        return lo;
    }
    let r = (v - lo).rem_euclid(2.0 * w);
    lo + if r > w { 2.0 * w - r } else { r }
}

fn step(
    sampler: &Sampler,
    rng: &mut ChaCha8Rng,
    t: f64,
    dt: f64,
    (x, y): (f64, f64),
    (z1, z2): (f64, f64),
    log: &mut Vec<JumpEvent>,
) -> Result<(f64, f64), EvalError> {
    let (drift, l) = sampler.local(t, x, y)?;
    let sq = dt.sqrt();
    let mut nx = x + drift[0] * dt + l[0] * sq * z1;
    let mut ny = y + drift[1] * dt + (l[1] * z1 + l[2] * z2) * sq;
    let mut events: Vec<(f64, usize, usize)> = Vec::new();
    for (c, lam) in sampler.poisson.iter().enumerate() {
        let Some(lam) = lam else { continue };
        let count = lam.sample(rng) as usize;
        for _ in 0..count {
            let u: f64 = rng.random();
            let m = sampler.pick[c].as_ref().map_or(0, |w| w.sample(rng));
            events.push((t + u * dt, c, m));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (time, c, m) in events {
        let jc = &sampler.p.jumps[c];
        let (g1, g2) = jc.gamma_at(time, nx, ny, &jc.atoms[m])?;
        nx += g1;
        ny += g2;
        log.push(JumpEvent { time, component: c as u32, atom: m as u32 });
    }
    Ok((nx, ny))
}
