use rayon::prelude::*;
use serde::Serialize;

use crate::exprs::{EvalContext, EvalError, Expr};
use crate::model::{FaceRule, FarField, Field2, Grid, JumpComponent, ProblemSpec};

/// Post-jump position of one node under one atom, with its bilinear stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Destination {
    pub x: f64,
    pub y: f64,
    /// Lower-left node of the interpolation cell.
    pub i0: u32,
    pub j0: u32,
    /// Bilinear weights for `(i0, j0), (i0, j0+1), (i0+1, j0), (i0+1, j0+1)`.
    /// Nonnegative and summing to one inside the box; extrapolation weights
    /// outside.
    pub weights: [f64; 4],
    pub outside: bool,
}

impl Destination {
    fn locate(grid: &Grid, x: f64, y: f64) -> Destination {
        let (i0, s) = cell(x, grid.x[0], grid.hx, grid.nx);
        let (j0, u) = cell(y, grid.y[0], grid.hy, grid.ny);
        let weights = [(1.0 - s) * (1.0 - u), (1.0 - s) * u, s * (1.0 - u), s * u];
        Destination { x, y, i0: i0 as u32, j0: j0 as u32, weights, outside: !grid.contains(x, y) }
    }

    /// Bilinear value of `f`; outside the box this extrapolates the edge cell.
    #[inline]
    pub fn interpolate(&self, f: &Field2) -> f64 {
        let (i, j) = (self.i0 as usize, self.j0 as usize);
        let w = &self.weights;
        w[0] * f.at(i, j) + w[1] * f.at(i, j + 1) + w[2] * f.at(i + 1, j) + w[3] * f.at(i + 1, j + 1)
    }
}

fn cell(v: f64, lo: f64, h: f64, n: usize) -> (usize, f64) {
    let mut pos = (v - lo) / h;
    // snap destinations that coincide with a node up to round-off
    if (pos - pos.round()).abs() < 1e-10 {
        pos = pos.round();
    }
    let i0 = if pos <= 0.0 { 0 } else { (pos.floor() as usize).min(n - 2) };
    (i0, pos - i0 as f64)
}

/// Precomputed jump data of one component at one time level.
#[derive(Debug, Clone)]
pub struct ComponentQuadrature {
    pub atom_weights: Vec<f64>,
    /// `destinations[node * M + m]` for node-major flat index and atom `m`.
    pub destinations: Vec<Destination>,
    /// Per node `sum_m w_m 1{gamma_bar(xi_m) < 1} gamma(node, xi_m)`; all zero
    /// when compensation is off.
    pub compensation: Vec<(f64, f64)>,
}

impl ComponentQuadrature {
    pub fn n_atoms(&self) -> usize {
        self.atom_weights.len()
    }

    pub fn destination(&self, node: usize, m: usize) -> &Destination {
        &self.destinations[node * self.atom_weights.len() + m]
    }
}

/// Jump quadrature of all components at one time level.
#[derive(Debug, Clone)]
pub struct JumpQuadrature {
    pub t: f64,
    pub nx: usize,
    pub ny: usize,
    pub components: Vec<ComponentQuadrature>,
}

impl JumpQuadrature {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn has_compensation(&self) -> bool {
        self.components.iter().any(|c| c.compensation.iter().any(|&(a, b)| a != 0.0 || b != 0.0))
    }

    /// Whether any destination leaves the box.
    pub fn any_outside(&self) -> bool {
        self.components.iter().any(|c| c.destinations.iter().any(|d| d.outside))
    }
}

fn component_quadrature(jc: &JumpComponent, grid: &Grid, t: f64) -> Result<ComponentQuadrature, EvalError> {
    let m = jc.atoms.len();
    let small: Vec<bool> = if jc.compensate_small_jumps {
        jc.atoms.iter().map(|a| jc.gamma_bar_at(a).map(|gb| gb < 1.0)).collect::<Result<_, _>>()?
    } else {
        vec![false; m]
    };
    let per_row: Vec<Result<(Vec<Destination>, Vec<(f64, f64)>), EvalError>> = grid
        .x
        .par_iter()
        .map(|&x| {
            let mut dests = Vec::with_capacity(grid.ny * m);
            let mut comp = Vec::with_capacity(grid.ny);
            for &y in &grid.y {
                let mut c = (0.0, 0.0);
                for (a, atom) in jc.atoms.iter().enumerate() {
                    let (g1, g2) = jc.gamma_at(t, x, y, atom)?;
                    dests.push(Destination::locate(grid, x + g1, y + g2));
                    if small[a] {
                        c.0 += atom.weight * g1;
                        c.1 += atom.weight * g2;
                    }
                }
                comp.push(c);
            }
            Ok((dests, comp))
        })
        .collect();
    let mut destinations = Vec::with_capacity(grid.len2() * m);
    let mut compensation = Vec::with_capacity(grid.len2());
    for r in per_row {
        let (d, c) = r?;
        destinations.extend(d);
        compensation.extend(c);
    }
    Ok(ComponentQuadrature { atom_weights: jc.atoms.iter().map(|a| a.weight).collect(), destinations, compensation })
}

/// Builds destinations, interpolation weights and compensation for every
/// node at time level `t_index`.
pub fn build_jump_quadrature(p: &ProblemSpec, grid: &Grid, t_index: usize) -> Result<JumpQuadrature, EvalError> {
    build_jump_quadrature_at(p, grid, grid.t[t_index])
}

pub fn build_jump_quadrature_at(p: &ProblemSpec, grid: &Grid, t: f64) -> Result<JumpQuadrature, EvalError> {
    let components = p.jumps.iter().map(|jc| component_quadrature(jc, grid, t)).collect::<Result<_, _>>()?;
    Ok(JumpQuadrature { t, nx: grid.nx, ny: grid.ny, components })
}

/// How `f` is valued at destinations outside the box.
#[derive(Clone, Copy)]
pub enum Exterior<'a> {
    /// Bilinear extrapolation from the nearest edge cell.
    Extrapolate,
    /// Value at the nearest point of the box.
    Clamp,
    Zero,
    Eval(&'a (dyn Fn(f64, f64) -> f64 + Sync)),
    /// The problem's far-field rule for the face that was crossed; `gain` is
    /// the gain in force at time `t`.
    FarField { rules: &'a FarField, gain: &'a Expr, t: f64 },
}

fn clamp_value(f: &Field2, grid: &Grid, x: f64, y: f64) -> f64 {
    let xc = x.clamp(grid.x[0], grid.x[grid.nx - 1]);
    let yc = y.clamp(grid.y[0], grid.y[grid.ny - 1]);
    Destination::locate(grid, xc, yc).interpolate(f)
}

fn exterior_value(d: &Destination, f: &Field2, grid: &Grid, ext: &Exterior<'_>) -> f64 {
    match ext {
        Exterior::Extrapolate => d.interpolate(f),
        Exterior::Clamp => clamp_value(f, grid, d.x, d.y),
        Exterior::Zero => 0.0,
        Exterior::Eval(h) => h(d.x, d.y),
        Exterior::FarField { rules, gain, t } => {
            let rule = if d.x < grid.x[0] {
                &rules.x_lo
            } else if d.x > grid.x[grid.nx - 1] {
                &rules.x_hi
            } else if d.y < grid.y[0] {
                &rules.y_lo
            } else {
                &rules.y_hi
            };
            let ctx = EvalContext::txy(*t, d.x, d.y);
            let eval = |e: &Expr| e.evaluate(&ctx).unwrap_or_else(|_| clamp_value(f, grid, d.x, d.y));
            match rule {
                FaceRule::Gain => eval(gain),
                FaceRule::Expression(e) => eval(e),
                FaceRule::Linear => d.interpolate(f),
            }
        }
    }
}

/// Central-difference gradient, one-sided on the faces.
pub fn gradient(f: &Field2, grid: &Grid) -> (Field2, Field2) {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut gx = Field2::zeros(nx, ny);
    let mut gy = Field2::zeros(nx, ny);
    for i in 0..nx {
        for j in 0..ny {
            let (im, ip) = (i.saturating_sub(1), (i + 1).min(nx - 1));
            let (jm, jp) = (j.saturating_sub(1), (j + 1).min(ny - 1));
            gx.set(i, j, (f.at(ip, j) - f.at(im, j)) / (grid.x[ip] - grid.x[im]));
            gy.set(i, j, (f.at(i, jp) - f.at(i, jm)) / (grid.y[jp] - grid.y[jm]));
        }
    }
    (gx, gy)
}

/// `(A f)(node) = sum_components sum_m w_m [f(dest) - f(node)] - comp . grad f(node)`.
///
/// When `grad_f` is `None` and some atom is compensated, the gradient is
/// taken by central differences of `f`.
pub fn apply_jump_operator(
    f: &Field2,
    grad_f: Option<(&Field2, &Field2)>,
    q: &JumpQuadrature,
    grid: &Grid,
    exterior: Exterior<'_>,
) -> Field2 {
    let mut out = Field2::zeros(grid.nx, grid.ny);
    if q.is_empty() {
        return out;
    }
    let owned;
    let grad = if q.has_compensation() {
        match grad_f {
            Some(g) => Some(g),
            None => {
                owned = gradient(f, grid);
                Some((&owned.0, &owned.1))
            }
        }
    } else {
        None
    };
    let ny = grid.ny;
    out.data.par_chunks_mut(ny).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            let node = i * ny + j;
            let f0 = f.data[node];
            let mut acc = 0.0;
            for c in &q.components {
                for (m, &w) in c.atom_weights.iter().enumerate() {
                    let d = c.destination(node, m);
                    let fd = if d.outside { exterior_value(d, f, grid, &exterior) } else { d.interpolate(f) };
                    acc += w * (fd - f0);
                }
                if let Some((gx, gy)) = grad {
                    let (cx, cy) = c.compensation[node];
                    acc -= cx * gx.data[node] + cy * gy.data[node];
                }
            }
            *v = acc;
        }
    });
    out
}

/// Discretized Lévy integrability sums of one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevyReport {
    /// `sum_m w_m min(gamma_bar(xi_m)^2, 1)`.
    pub sum_small: f64,
    /// `sum_m w_m min(gamma_bar(xi_m), 1)`.
    pub sum_gammabar: f64,
    pub total_mass: f64,
    pub finite_small: bool,
    pub finite_gammabar: bool,
}

pub fn levy_integrability_report(jc: &JumpComponent) -> Result<LevyReport, EvalError> {
    let mut sum_small = 0.0;
    let mut sum_gammabar = 0.0;
    for a in &jc.atoms {
        let gb = jc.gamma_bar_at(a)?;
        sum_small += a.weight * (gb * gb).min(1.0);
        sum_gammabar += a.weight * gb.min(1.0);
    }
    Ok(LevyReport {
        sum_small,
        sum_gammabar,
        total_mass: jc.total_mass(),
        finite_small: sum_small.is_finite(),
        finite_gammabar: sum_gammabar.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::{parse, Symbols};
    use crate::model::{Atom, CoefficientSet, DomainBox, GainSpec};

    fn p(s: &str) -> Expr {
        parse_with_mark(s)
    }

    fn parse_with_mark(s: &str) -> Expr {
        crate::exprs::parse_with(s, &Symbols::with_marks(1)).unwrap()
    }

    fn spec_with(gamma1: &str, w: f64, gamma_bar: &str, compensate: bool) -> ProblemSpec {
        let mut s = ProblemSpec::new(
            CoefficientSet::zero(),
            GainSpec::new(parse("0").unwrap()),
            DomainBox { x_lo: 0.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 },
            1.0,
        );
        s.jumps.push(
            JumpComponent::with_atoms(p(gamma1), p("0"), 1, vec![Atom { mark: vec![1.0], weight: w }], p(gamma_bar))
                .compensated(compensate),
        );
        s
    }

    #[test]
    fn destinations_and_compensation() {
        let s = spec_with("0.25", 2.0, "0.5", true);
        let g = s.build_grid(3, 11, 11).unwrap();
        let q = build_jump_quadrature(&s, &g, 0).unwrap();
        let c = &q.components[0];
        let node = g.idx(2, 3);
        let d = c.destination(node, 0);
        assert!((d.x - (0.2 + 0.25)).abs() < 1e-15 && (d.y - 0.3).abs() < 1e-15);
        assert!(d.weights.iter().all(|&w| w >= 0.0));
        assert!((d.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(c.compensation[node], (0.5, 0.0));
        assert!(c.destination(g.idx(9, 3), 0).outside);

        let off = spec_with("0.25", 2.0, "0.5", false);
        let q = build_jump_quadrature(&off, &g, 0).unwrap();
        assert!(q.components[0].compensation.iter().all(|&c| c == (0.0, 0.0)));
    }

    #[test]
    fn linear_field_examples() {
        let g_spec = spec_with("0.2", 1.5, "0.5", false);
        let g = g_spec.build_grid(3, 21, 11).unwrap();
        let f = Field2::from_fn(&g, |x, _| x);
        let q = build_jump_quadrature(&g_spec, &g, 0).unwrap();
        let a = apply_jump_operator(&f, None, &q, &g, Exterior::Extrapolate);
        for v in &a.data {
            assert!((v - 1.5 * 0.2).abs() < 1e-12);
        }
        let comp = spec_with("0.2", 1.5, "0.5", true);
        let q = build_jump_quadrature(&comp, &g, 0).unwrap();
        let a = apply_jump_operator(&f, None, &q, &g, Exterior::Extrapolate);
        assert!(a.max_abs() < 1e-12);
        let zero = spec_with("0", 1.5, "0.5", false);
        let q = build_jump_quadrature(&zero, &g, 0).unwrap();
        let h = Field2::from_fn(&g, |x, y| (3.0 * x).sin() + y * y);
        assert_eq!(apply_jump_operator(&h, None, &q, &g, Exterior::Zero).max_abs(), 0.0);
    }

    #[test]
    fn bilinear_fields_are_exact_inside() {
        let s = spec_with("0.13", 0.7, "1", false);
        let g = s.build_grid(3, 17, 13).unwrap();
        let bil = |x: f64, y: f64| 1.0 + 2.0 * x - y + 3.0 * x * y;
        let f = Field2::from_fn(&g, bil);
        let q = build_jump_quadrature(&s, &g, 0).unwrap();
        let a = apply_jump_operator(&f, None, &q, &g, Exterior::Zero);
        for i in 0..g.nx {
            for j in 0..g.ny {
                let (x, y) = (g.x[i], g.y[j]);
                if x + 0.13 <= 1.0 {
                    let want = 0.7 * (bil(x + 0.13, y) - bil(x, y));
                    assert!((a.at(i, j) - want).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn far_field_rule_values_exits() {
        let s = spec_with("0.5", 1.0, "1", false);
        let g = s.build_grid(3, 11, 5).unwrap();
        let f = Field2::zeros(g.nx, g.ny);
        let q = build_jump_quadrature(&s, &g, 0).unwrap();
        let gain = parse("x").unwrap();
        let rules = FarField::default();
        let a = apply_jump_operator(&f, None, &q, &g, Exterior::FarField { rules: &rules, gain: &gain, t: 0.0 });
        // node x=0.8 jumps to 1.3, valued by the gain
        assert!((a.at(8, 2) - 1.3).abs() < 1e-12);
        assert_eq!(a.at(2, 2), 0.0);
    }

    #[test]
    fn levy_sums() {
        let one = |w: f64, gb: &str| {
            let s = spec_with("0.1", w, gb, false);
            levy_integrability_report(&s.jumps[0]).unwrap()
        };
        let r = one(0.5, "0.2");
        assert!((r.sum_small - 0.02).abs() < 1e-15 && (r.sum_gammabar - 0.1).abs() < 1e-15);
        let r = one(2.0, "3");
        assert_eq!((r.sum_small, r.sum_gammabar), (2.0, 2.0));
        let mut s = spec_with("0.1", 1.0, "1", false);
        s.jumps[0].atoms.clear();
        let r = levy_integrability_report(&s.jumps[0]).unwrap();
        assert_eq!((r.sum_small, r.sum_gammabar), (0.0, 0.0));
    }

    #[test]
    fn positivity_at_zero_node() {
        let s = spec_with("0.3", 1.0, "1", false);
        let g = s.build_grid(3, 21, 5).unwrap();
        let f = Field2::from_fn(&g, |x, _| (x - 0.5).max(0.0).powi(2));
        let q = build_jump_quadrature(&s, &g, 0).unwrap();
        let a = apply_jump_operator(&f, None, &q, &g, Exterior::Clamp);
        for i in 0..g.nx {
            if g.x[i] <= 0.5 {
                assert!(a.at(i, 2) >= 0.0);
            }
        }
    }
}
