//! Stopping-surface extraction and continuity / smooth-fit diagnostics.

mod continuity;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::model::{Orientation, WindowIndex, WindowU};
use crate::solver::SolveResult;

pub use continuity::{continuity_report, AxisStats, ContinuityOptions, ContinuityReport, Monotonicity};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundaryError {
    #[error("stopping mask contradicts the declared orientation in {bad} of {total} slices")]
    OrientationMismatch { bad: usize, total: usize },
    #[error("{0}")]
    Window(String),
}

/// Sub-grid placement of the surface between the last stopped node and the
/// first continuation node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Refinement {
    /// The grid coordinate of the last stopped node.
    #[default]
    None,
    /// Linear interpolation of the crossing of `v - g` through the
    /// activation tolerance.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtractOptions {
    /// Only nodes with `x` in this closed range take part. Far from the
    /// surface `v` and `g` can agree to within the activation band (for
    /// example a put far out of the money), which would otherwise read as
    /// stopping.
    pub x_range: Option<(f64, f64)>,
    pub refinement: Refinement,
}

/// `b[k][j] = x*(t_k, y_j)`, with `-inf`/`+inf` for all-continue/all-stop
/// slices (continuation above; signs swap for continuation below).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundarySurface {
    #[serde(serialize_with = "ser_matrix")]
    pub b: Vec<Vec<f64>>,
    pub orientation: Orientation,
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub hx: f64,
    pub extraction_tol: f64,
    pub refinement: Refinement,
    pub x_range: Option<(f64, f64)>,
    /// Slices whose mask was not monotone in `x`.
    pub non_monotone: Vec<(usize, usize)>,
}

/// Infinite entries become the strings `"+inf"` / `"-inf"`.
fn ser_matrix<S: Serializer>(b: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    #[serde(untagged)]
    enum Cell {
        F(f64),
        S(&'static str),
    }
    let rows: Vec<Vec<Cell>> = b
        .iter()
        .map(|r| {
            r.iter()
                .map(|&v| {
                    if v == f64::INFINITY {
                        Cell::S("+inf")
                    } else if v == f64::NEG_INFINITY {
                        Cell::S("-inf")
                    } else {
                        Cell::F(v)
                    }
                })
                .collect()
        })
        .collect();
    rows.serialize(s)
}

impl BoundarySurface {
    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.b[k][j]
    }

    /// Rows `(t, y, x_star)` for every entry.
    pub fn csv(&self) -> String {
        let mut out = String::from("t,y,x_star\n");
        for (k, row) in self.b.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let cell = if *v == f64::INFINITY {
                    "+inf".to_string()
                } else if *v == f64::NEG_INFINITY {
                    "-inf".to_string()
                } else {
                    format!("{v:?}")
                };
                out.push_str(&format!("{:?},{:?},{cell}\n", self.t[k], self.y[j]));
            }
        }
        out
    }

    /// Bilinear interpolation in `(t, y)`; `None` if any corner is infinite.
    pub fn interpolate(&self, t: f64, y: f64) -> Option<f64> {
        let locate = |v: f64, c: &[f64]| -> (usize, f64) {
            let n = c.len();
            let h = (c[n - 1] - c[0]) / (n - 1) as f64;
            let pos = ((v - c[0]) / h).clamp(0.0, (n - 1) as f64);
            let i = (pos.floor() as usize).min(n - 2);
            (i, pos - i as f64)
        };
        let (k, s) = locate(t, &self.t);
        let (j, w) = locate(y, &self.y);
        let c = [self.b[k][j], self.b[k][j + 1], self.b[k + 1][j], self.b[k + 1][j + 1]];
        if c.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((1.0 - s) * ((1.0 - w) * c[0] + w * c[1]) + s * ((1.0 - w) * c[2] + w * c[3]))
    }
}

enum SliceShape {
    Monotone,
    NonMonotone,
    Reversed,
}

/// Extracts `x*(t, y)` slice by slice from the exercise mask.
pub fn extract_boundary(
    res: &SolveResult,
    orientation: Orientation,
    opts: &ExtractOptions,
) -> Result<BoundarySurface, BoundaryError> {
    let g = &res.grid;
    let (i_lo, i_hi) = match opts.x_range {
        Some((a, b)) => {
            let lo = g.x.iter().position(|&x| x >= a - 1e-9 * g.hx);
            let hi = g.x.iter().rposition(|&x| x <= b + 1e-9 * g.hx);
            match (lo, hi) {
                (Some(lo), Some(hi)) if lo < hi => (lo, hi),
                _ => return Err(BoundaryError::Window(format!("x range [{a}, {b}] holds fewer than two nodes"))),
            }
        }
        None => (0, g.nx - 1),
    };
    let above = orientation == Orientation::ContinuationAbove;
    let slices: Vec<(f64, SliceShape)> = (0..g.nt * g.ny)
        .into_par_iter()
        .map(|s| {
            let (k, j) = (s / g.ny, s % g.ny);
            extract_slice(res, k, j, i_lo, i_hi, above, opts.refinement)
        })
        .collect();
    let mut b = vec![vec![0.0; g.ny]; g.nt];
    let mut non_monotone = Vec::new();
    let mut reversed = 0;
    for (s, (v, shape)) in slices.into_iter().enumerate() {
        let (k, j) = (s / g.ny, s % g.ny);
        b[k][j] = v;
        match shape {
            SliceShape::Monotone => {}
            SliceShape::NonMonotone => non_monotone.push((k, j)),
            SliceShape::Reversed => {
                reversed += 1;
                non_monotone.push((k, j));
            }
        }
    }
    let total = g.nt * g.ny;
    if reversed as f64 > 0.05 * total as f64 {
        return Err(BoundaryError::OrientationMismatch { bad: reversed, total });
    }
    Ok(BoundarySurface {
        b,
        orientation,
        nt: g.nt,
        nx: g.nx,
        ny: g.ny,
        t: g.t.clone(),
        y: g.y.clone(),
        hx: g.hx,
        extraction_tol: res.activation_tol,
        refinement: opts.refinement,
        x_range: opts.x_range,
        non_monotone,
    })
}

fn extract_slice(
    res: &SolveResult,
    k: usize,
    j: usize,
    i_lo: usize,
    i_hi: usize,
    above: bool,
    refinement: Refinement,
) -> (f64, SliceShape) {
    let g = &res.grid;
    // walk from the stopping side toward the continuation side
    let order: Vec<usize> = if above { (i_lo..=i_hi).collect() } else { (i_lo..=i_hi).rev().collect() };
    let stopped: Vec<bool> = order.iter().map(|&i| res.stopped(k, i, j)).collect();
    let last_stop = stopped.iter().rposition(|&s| s);
    let (inf_stop, inf_cont) = if above { (f64::INFINITY, f64::NEG_INFINITY) } else { (f64::NEG_INFINITY, f64::INFINITY) };
    let Some(p) = last_stop else {
        return (inf_cont, SliceShape::Monotone);
    };
    let shape = if stopped[..=p].iter().all(|&s| s) {
        SliceShape::Monotone
    } else if stopped[0] {
        SliceShape::NonMonotone
    } else {
        SliceShape::Reversed
    };
    let i_s = order[p];
    let x_s = g.x[i_s];
    if p == order.len() - 1 {
        // no continuation beyond the last stopped node
        return if matches!(shape, SliceShape::Monotone) { (inf_stop, shape) } else { (x_s, shape) };
    }
    let dir = if above { 1.0 } else { -1.0 };
    let refined = match refinement {
        Refinement::None => x_s,
        Refinement::Linear => {
            let (u0, u1) = (res.u(k, i_s, j), res.u(k, order[p + 1], j));
            let tol = res.activation_tol;
            let frac = if u1 > u0 { ((tol - u0) / (u1 - u0)).clamp(0.0, 1.0) } else { 0.0 };
            x_s + dir * frac * g.hx
        }
    };
    (refined, shape)
}

/// Residuals of smooth fit along the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothFitResidual {
    /// `|u|` at the surface node.
    pub max_u: f64,
    /// First derivatives of `u` by central differences one cell into the
    /// continuation region.
    pub max_dx: f64,
    pub max_dy: f64,
    pub max_dt: f64,
    pub samples: usize,
}

fn window_index(res: &SolveResult, w: &WindowU) -> Result<WindowIndex, BoundaryError> {
    w.index(&res.grid).map_err(|e| BoundaryError::Window(e.to_string()))
}

/// Samples `u` and its first derivatives along the surface inside the window.
pub fn smooth_fit_residual(res: &SolveResult, b: &BoundarySurface, w: &WindowU) -> Result<SmoothFitResidual, BoundaryError> {
    let g = &res.grid;
    let ix = window_index(res, w)?;
    let above = b.orientation == Orientation::ContinuationAbove;
    let mut out = SmoothFitResidual { max_u: 0.0, max_dx: 0.0, max_dy: 0.0, max_dt: 0.0, samples: 0 };
    for k in ix.k0..=ix.k1 {
        for j in ix.j0..=ix.j1 {
            let x = b.b[k][j];
            if !x.is_finite() || x < w.x_d || x > w.x_u {
                continue;
            }
            // surface node: the last stopped node at or behind x
            let pos = (x - g.x[0]) / g.hx;
            let i_s = if above { (pos + 1e-9).floor() as usize } else { (pos - 1e-9).ceil() as usize };
            let i_c = if above { i_s + 1 } else { i_s.wrapping_sub(1) };
            if i_c == 0 || i_c + 1 >= g.nx {
                continue;
            }
            let dx = (res.u(k, i_c + 1, j) - res.u(k, i_c - 1, j)) / (2.0 * g.hx);
            let dy = (res.u(k, i_c, j + 1) - res.u(k, i_c, j - 1)) / (2.0 * g.hy);
            let dt = if k == 0 {
                (res.u(1, i_c, j) - res.u(0, i_c, j)) / g.dt
            } else {
                (res.u(k + 1, i_c, j) - res.u(k - 1, i_c, j)) / (2.0 * g.dt)
            };
            out.max_u = out.max_u.max(res.u(k, i_s, j).abs());
            out.max_dx = out.max_dx.max(dx.abs());
            out.max_dy = out.max_dy.max(dy.abs());
            out.max_dt = out.max_dt.max(dt.abs());
            out.samples += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientMinimum {
    pub min: f64,
    /// `(k, i, j)` of the minimum.
    pub witness: (usize, usize, usize),
}

/// Minimum over the window of the central difference `d/dx (v - g)`.
pub fn monotone_gradient_check(res: &SolveResult, w: &WindowU) -> Result<GradientMinimum, BoundaryError> {
    let g = &res.grid;
    let ix = window_index(res, w)?;
    let mut best = GradientMinimum { min: f64::INFINITY, witness: (0, 0, 0) };
    for (k, i, j) in ix.nodes() {
        let d = (res.u(k, i + 1, j) - res.u(k, i - 1, j)) / (2.0 * g.hx);
        if d < best.min {
            best = GradientMinimum { min: d, witness: (k, i, j) };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DomainBox, Grid};

    fn manufactured(nx: usize, u: impl Fn(f64, f64, f64) -> f64) -> SolveResult {
        let b = DomainBox { x_lo: 0.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 };
        let grid = Grid::new(1.0, &b, 11, nx, 11).unwrap();
        let mut value = Vec::new();
        for &t in &grid.t {
            for &x in &grid.x {
                for &y in &grid.y {
                    value.push(u(t, x, y));
                }
            }
        }
        let gain = vec![0.0; value.len()];
        SolveResult::from_fields(grid, value, gain, 1e-12)
    }

    fn window() -> WindowU {
        WindowU::new((0.0, 0.5), (0.3, 0.7), (0.3, 0.7))
    }

    #[test]
    fn extraction_examples() {
        let res = manufactured(6, |_, x, _| if x <= 0.4 + 1e-12 { 0.0 } else { 1.0 });
        let b = extract_boundary(&res, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap();
        assert_eq!(b.at(0, 3), res.grid.x[2]);
        assert!((b.at(0, 3) - 0.4).abs() < 1e-15);
        let cont = manufactured(6, |_, _, _| 1.0);
        let b = extract_boundary(&cont, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap();
        assert_eq!(b.at(1, 1), f64::NEG_INFINITY);
        let stop = manufactured(6, |_, _, _| 0.0);
        let b = extract_boundary(&stop, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap();
        assert_eq!(b.at(1, 1), f64::INFINITY);
    }

    #[test]
    fn reversed_masks_are_rejected() {
        let res = manufactured(11, |_, x, _| if x >= 0.5 { 0.0 } else { 1.0 });
        let err = extract_boundary(&res, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap_err();
        assert!(matches!(err, BoundaryError::OrientationMismatch { .. }));
        let b = extract_boundary(&res, Orientation::ContinuationBelow, &ExtractOptions::default()).unwrap();
        assert!((b.at(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn noisy_slice_is_healed_and_flagged() {
        let res = manufactured(11, |t, x, y| {
            let hole = (x - 0.2).abs() < 1e-9 && t == 0.0 && (y - 0.5).abs() < 1e-9;
            if x <= 0.4 + 1e-12 && !hole {
                0.0
            } else {
                1.0
            }
        });
        let b = extract_boundary(&res, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap();
        assert!((b.at(0, 5) - 0.4).abs() < 1e-12);
        assert_eq!(b.non_monotone, vec![(0, 5)]);
    }

    #[test]
    fn stopped_tail_takes_largest_stopped_x() {
        let res = manufactured(11, |_, x, _| if x <= 0.3 + 1e-12 || x >= 0.8 - 1e-12 { 0.0 } else { 1.0 });
        let b = extract_boundary(&res, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap();
        assert_eq!(b.at(4, 4), 1.0);
        assert_eq!(b.non_monotone.len(), 11 * 11);
        let opts = ExtractOptions { x_range: Some((0.0, 0.65)), ..Default::default() };
        let b = extract_boundary(&res, Orientation::ContinuationAbove, &opts).unwrap();
        assert!((b.at(4, 4) - 0.3).abs() < 1e-12);
        assert!(b.non_monotone.is_empty());
    }

    #[test]
    fn smooth_fit_examples() {
        let zero = manufactured(101, |_, _, _| 0.0);
        let b = extract_boundary(&zero, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap();
        // all-stop surface has no finite samples; residuals stay zero
        let r = smooth_fit_residual(&zero, &b, &window()).unwrap();
        assert_eq!((r.max_u, r.max_dx, r.max_dy, r.max_dt), (0.0, 0.0, 0.0, 0.0));

        let quad = manufactured(101, |_, x, _| (x - 0.5).max(0.0).powi(2));
        let b = extract_boundary(&quad, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap();
        assert!((b.at(0, 5) - 0.5).abs() < 1e-12);
        let r = smooth_fit_residual(&quad, &b, &window()).unwrap();
        assert_eq!(r.max_u, 0.0);
        assert!((r.max_dx - 2.0 * 0.01).abs() < 1e-12, "{}", r.max_dx);
        assert!(r.samples > 0);

        let kink = manufactured(101, |_, x, _| (x - 0.5).max(0.0));
        let b = extract_boundary(&kink, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap();
        let r = smooth_fit_residual(&kink, &b, &window()).unwrap();
        assert!((r.max_dx - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_examples() {
        let zero = manufactured(21, |_, _, _| 0.0);
        assert_eq!(monotone_gradient_check(&zero, &window()).unwrap().min, 0.0);
        let quad = manufactured(21, |_, x, _| (x - 0.5).max(0.0).powi(2));
        assert!(monotone_gradient_check(&quad, &window()).unwrap().min >= 0.0);
        let dec = manufactured(21, |_, x, _| 1.0 - x);
        assert!(monotone_gradient_check(&dec, &window()).unwrap().min < 0.0);
    }

    #[test]
    fn sub_grid_refinement() {
        let quad = manufactured(21, |_, x, _| 3.0 * (x - 0.437).max(0.0).powi(2));
        let opts = ExtractOptions { refinement: Refinement::Linear, ..Default::default() };
        let b = extract_boundary(&quad, Orientation::ContinuationAbove, &opts).unwrap();
        assert!(b.at(2, 4) >= 0.4 && b.at(2, 4) <= 0.45);
    }

    #[test]
    fn csv_and_json() {
        let res = manufactured(6, |_, x, _| if x <= 0.4 + 1e-12 { 0.0 } else { 1.0 });
        let b = extract_boundary(&res, Orientation::ContinuationAbove, &ExtractOptions::default()).unwrap();
        let csv = b.csv();
        assert!(csv.starts_with("t,y,x_star\n0.0,0.0,"));
        let json = serde_json::to_value(&b).unwrap();
        assert_eq!(json["orientation"], "continuation-above");
    }
}
