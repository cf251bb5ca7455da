use serde::Serialize;

use super::BoundarySurface;
use crate::model::WindowU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuityOptions<'a> {
    pub monotone_t: Monotonicity,
    pub monotone_y: Monotonicity,
    pub jump_factor: f64,
    /// The same problem solved on the next finer grid.
    pub finer: Option<&'a BoundarySurface>,
}

impl Default for ContinuityOptions<'_> {
    fn default() -> Self {
        ContinuityOptions { monotone_t: Monotonicity::Unspecified, monotone_y: Monotonicity::Unspecified, jump_factor: 10.0, finer: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxisStats {
    pub declared: Monotonicity,
    pub violations: usize,
    pub max_violation: f64,
    /// `(delta in index steps, delta in axis units, omega)`.
    pub modulus: Vec<(usize, f64, f64)>,
    pub max_step: f64,
    /// Largest single-step increment on the finer grid, when supplied.
    pub finer_max_step: Option<f64>,
    pub discontinuity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub t: AxisStats,
    pub y: AxisStats,
    pub jump_factor: f64,
    pub hx: f64,
    /// Finite entries inside the window.
    pub samples: usize,
    /// Window slices whose `x*` is infinite or leaves `[x_d, x_u]`.
    pub exits: usize,
    pub refinement_distance: Option<f64>,
}

const DELTAS: [usize; 3] = [1, 2, 4];

/// Entries of `b` over the window rows and columns, `None` when infinite or
/// outside the window `x`-range.
fn masked(b: &BoundarySurface, w: &WindowU) -> (Vec<Vec<Option<f64>>>, usize) {
    let tol_t = 1e-9 * (b.t[1] - b.t[0]);
    let tol_y = 1e-9 * (b.y[1] - b.y[0]);
    let ks: Vec<usize> = (0..b.nt).filter(|&k| b.t[k] >= w.t1 - tol_t && b.t[k] <= w.t2 + tol_t).collect();
    let js: Vec<usize> = (0..b.ny).filter(|&j| b.y[j] >= w.y_d - tol_y && b.y[j] <= w.y_u + tol_y).collect();
    let mut exits = 0;
    let m = ks
        .iter()
        .map(|&k| {
            js.iter()
                .map(|&j| {
                    let v = b.b[k][j];
                    if v.is_finite() && v >= w.x_d && v <= w.x_u {
                        Some(v)
                    } else {
                        exits += 1;
                        None
                    }
                })
                .collect()
        })
        .collect();
    (m, exits)
}

/// Pairs `(earlier, later)` along an axis at index distance `d`.
fn pairs(m: &[Vec<Option<f64>>], along_t: bool, d: usize) -> Vec<(f64, f64)> {
    let (n0, n1) = (m.len(), m.first().map_or(0, Vec::len));
    let mut out = Vec::new();
    for a in 0..n0 {
        for c in 0..n1 {
            let (a2, c2) = if along_t { (a + d, c) } else { (a, c + d) };
            if a2 < n0 && c2 < n1 {
                if let (Some(u), Some(v)) = (m[a][c], m[a2][c2]) {
                    out.push((u, v));
                }
            }
        }
    }
    out
}

fn axis(m: &[Vec<Option<f64>>], along_t: bool, step: f64, declared: Monotonicity) -> AxisStats {
    let ones = pairs(m, along_t, 1);
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    for &(u, v) in &ones {
        let drop = match declared {
            Monotonicity::Increasing => u - v,
            Monotonicity::Decreasing => v - u,
            Monotonicity::Unspecified => 0.0,
        };
        if drop > 1e-9 * (1.0 + u.abs().max(v.abs())) {
            violations += 1;
            max_violation = max_violation.max(drop);
        }
    }
    let mut modulus = Vec::new();
    let mut running: f64 = 0.0;
    for d in 1..=DELTAS[DELTAS.len() - 1] {
        running = pairs(m, along_t, d).iter().fold(running, |acc, (u, v)| acc.max((v - u).abs()));
        if DELTAS.contains(&d) {
            modulus.push((d, d as f64 * step, running));
        }
    }
    AxisStats {
        declared,
        violations,
        max_violation,
        max_step: modulus[0].2,
        modulus,
        finer_max_step: None,
        discontinuity: false,
    }
}

/// Monotonicity, discrete modulus of continuity and jump flags of the surface
/// over the window, along `t` and along `y`.
pub fn continuity_report(b: &BoundarySurface, w: &WindowU, opts: &ContinuityOptions) -> ContinuityReport {
    let (m, exits) = masked(b, w);
    let dt = b.t[1] - b.t[0];
    let hy = b.y[1] - b.y[0];
    let mut t = axis(&m, true, dt, opts.monotone_t);
    let mut y = axis(&m, false, hy, opts.monotone_y);
    let threshold = opts.jump_factor * b.hx;
    let fine = opts.finer.map(|f| {
        let (fm, _) = masked(f, w);
        (axis(&fm, true, f.t[1] - f.t[0], opts.monotone_t), axis(&fm, false, f.y[1] - f.y[0], opts.monotone_y))
    });
    for (stats, fstats) in [(&mut t, fine.as_ref().map(|f| &f.0)), (&mut y, fine.as_ref().map(|f| &f.1))] {
        stats.finer_max_step = fstats.map(|f| f.max_step);
        let persists = match stats.finer_max_step {
            Some(fs) => stats.max_step > 0.0 && fs / stats.max_step >= 0.8,
            None => true,
        };
        stats.discontinuity = stats.max_step > threshold && persists;
    }
    let refinement_distance = opts.finer.map(|f| {
        let mut sup: f64 = 0.0;
        for (k, &tk) in b.t.iter().enumerate() {
            for (j, &yj) in b.y.iter().enumerate() {
                let v = b.b[k][j];
                let inside = tk >= w.t1 - 1e-9 * dt && tk <= w.t2 + 1e-9 * dt && yj >= w.y_d - 1e-9 * hy && yj <= w.y_u + 1e-9 * hy;
                if !inside || !v.is_finite() || v < w.x_d || v > w.x_u {
                    continue;
                }
                if let Some(fv) = f.interpolate(tk, yj) {
                    sup = sup.max((fv - v).abs());
                }
            }
        }
        sup
    });
    let samples = m.iter().flatten().filter(|v| v.is_some()).count();
    ContinuityReport { t, y, jump_factor: opts.jump_factor, hx: b.hx, samples, exits, refinement_distance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::Refinement;
    use crate::model::Orientation;

    fn surface(nt: usize, ny: usize, dt: f64, hy: f64, hx: f64, f: impl Fn(f64, f64) -> f64) -> BoundarySurface {
        let t: Vec<f64> = (0..nt).map(|k| k as f64 * dt).collect();
        let y: Vec<f64> = (0..ny).map(|j| j as f64 * hy).collect();
        let b = t.iter().map(|&tk| y.iter().map(|&yj| f(tk, yj)).collect()).collect();
        BoundarySurface {
            b,
            orientation: Orientation::ContinuationAbove,
            nt,
            nx: 0,
            ny,
            t,
            y,
            hx,
            extraction_tol: 0.0,
            refinement: Refinement::None,
            x_range: None,
            non_monotone: Vec::new(),
        }
    }

    fn everywhere() -> WindowU {
        WindowU::new((0.0, 10.0), (-10.0, 10.0), (0.0, 10.0))
    }

    #[test]
    fn constant_surface() {
        let b = surface(11, 11, 0.1, 0.1, 0.05, |_, _| 0.3);
        let opts = ContinuityOptions { monotone_t: Monotonicity::Increasing, monotone_y: Monotonicity::Decreasing, ..Default::default() };
        let r = continuity_report(&b, &everywhere(), &opts);
        assert_eq!(r.t.violations + r.y.violations, 0);
        assert!(r.t.modulus.iter().chain(&r.y.modulus).all(|m| m.2 == 0.0));
        assert!(!r.t.discontinuity && !r.y.discontinuity);
        assert_eq!(r.samples, 121);
    }

    #[test]
    fn smooth_increasing_surface() {
        let b = surface(11, 11, 0.1, 0.1, 0.05, |t, y| 0.1 * t + 0.2 * y);
        let opts = ContinuityOptions { monotone_t: Monotonicity::Increasing, monotone_y: Monotonicity::Increasing, ..Default::default() };
        let r = continuity_report(&b, &everywhere(), &opts);
        assert!((r.t.max_step - 0.01).abs() < 1e-12);
        assert!((r.y.max_step - 0.02).abs() < 1e-12);
        assert!(!r.t.discontinuity && !r.y.discontinuity);
        assert_eq!(r.t.violations + r.y.violations, 0);
        let om: Vec<f64> = r.y.modulus.iter().map(|m| m.2).collect();
        assert!(om.windows(2).all(|w| w[0] <= w[1]));
        assert!((om[2] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn step_in_y_is_flagged() {
        let b = surface(11, 11, 0.1, 0.1, 0.01, |_, y| if y > 0.55 { 0.8 } else { 0.3 });
        let r = continuity_report(&b, &everywhere(), &ContinuityOptions::default());
        assert!((r.y.max_step - 0.5).abs() < 1e-12);
        assert!(r.y.discontinuity && !r.t.discontinuity);
        // same jump on the finer grid persists
        let f = surface(21, 21, 0.05, 0.05, 0.005, |_, y| if y > 0.55 { 0.8 } else { 0.3 });
        let opts = ContinuityOptions { finer: Some(&f), ..Default::default() };
        let r = continuity_report(&b, &everywhere(), &opts);
        assert!(r.y.discontinuity);
        // a steep but continuous ramp halves under refinement
        let ramp = |_: f64, y: f64| 0.3 + 0.5 * ((y - 0.5) / 0.1).clamp(0.0, 1.0);
        let c = surface(11, 11, 0.1, 0.1, 0.01, ramp);
        let cf = surface(21, 21, 0.05, 0.05, 0.005, ramp);
        let opts = ContinuityOptions { finer: Some(&cf), ..Default::default() };
        let r = continuity_report(&c, &everywhere(), &opts);
        assert!(!r.y.discontinuity);
        assert!(r.refinement_distance.unwrap() < 1e-12);
    }

    #[test]
    fn violations_and_exits() {
        let b = surface(11, 5, 0.1, 0.25, 0.05, |t, _| if t > 0.45 && t < 0.55 { f64::INFINITY } else { 1.0 - t });
        let opts = ContinuityOptions { monotone_t: Monotonicity::Increasing, ..Default::default() };
        let r = continuity_report(&b, &everywhere(), &opts);
        assert_eq!(r.exits, 5);
        assert_eq!(r.samples, 50);
        assert_eq!(r.t.violations, 40);
        assert!((r.t.max_violation - 0.1).abs() < 1e-12);
    }
}
