//! Problem definition: coefficients, gain, jumps, domain, grids and the
//! verification window.

pub mod file;
mod grid;
pub mod quadrature;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprs::{EvalContext, EvalError, Expr, UnaryOp, Var};

pub use grid::{evaluate_field, evaluate_field_at, gain_field, Field2, Grid, NodeEvalError};
pub use validate::{has_errors, validate_spec, Diagnostic, Severity};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("node counts must all be at least 3 (got nt={nt}, nx={nx}, ny={ny})")]
    InvalidCounts { nt: usize, nx: usize, ny: usize },
    #[error("invalid domain box: {0}")]
    InvalidBox(String),
    #[error("horizon must be positive and finite (got {0})")]
    InvalidHorizon(f64),
    #[error("invalid jump measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Local coefficients of the generator. The cross coefficient is always
/// `rho * sqrt(beta1 * beta2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub alpha1: Expr,
    pub alpha2: Expr,
    pub beta1: Expr,
    pub beta2: Expr,
    pub rho: f64,
    pub r: Expr,
    pub running_cost: Option<Expr>,
}

impl CoefficientSet {
    /// All coefficients zero, `rho = 0`, no running cost.
    pub fn zero() -> CoefficientSet {
        CoefficientSet {
            alpha1: Expr::Num(0.0),
            alpha2: Expr::Num(0.0),
            beta1: Expr::Num(0.0),
            beta2: Expr::Num(0.0),
            rho: 0.0,
            r: Expr::Num(0.0),
            running_cost: None,
        }
    }

    pub fn beta_bar(&self, beta1: f64, beta2: f64) -> f64 {
        self.rho * (beta1.max(0.0) * beta2.max(0.0)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSpec {
    pub g: Expr,
    pub terminal_g: Option<Expr>,
}

impl GainSpec {
    pub fn new(g: Expr) -> GainSpec {
        GainSpec { g, terminal_g: None }
    }

    pub fn at_level(&self, terminal: bool) -> &Expr {
        match (&self.terminal_g, terminal) {
            (Some(tg), true) => tg,
            _ => &self.g,
        }
    }
}

/// A point mass of a discretized jump measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mark: Vec<f64>,
    pub weight: f64,
}

/// A jump density on a truncation box, discretized by a tensor
/// Gauss–Legendre rule with `nodes` points per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySpec {
    pub density: Expr,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: usize,
}

impl DensitySpec {
    pub fn discretize(&self, nodes: usize) -> Result<Vec<Atom>, ModelError> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(ModelError::InvalidMeasure("truncation bounds must match the mark dimension".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) {
            return Err(ModelError::InvalidMeasure("truncation interval must have lower < upper".into()));
        }
        if nodes == 0 {
            return Err(ModelError::InvalidMeasure("quadrature needs at least one node".into()));
        }
        let mut atoms = Vec::new();
        for (mark, w) in quadrature::tensor_rule(&self.lower, &self.upper, nodes) {
            let d = self.density.evaluate(&EvalContext::new().with_marks(&mark))?;
            if d < 0.0 || !d.is_finite() {
                return Err(ModelError::InvalidMeasure(format!("density is {d} at mark {mark:?}")));
            }
            if d * w > 0.0 {
                atoms.push(Atom { mark, weight: d * w });
            }
        }
        if atoms.is_empty() {
            return Err(ModelError::InvalidMeasure("density vanishes on every quadrature node".into()));
        }
        Ok(atoms)
    }
}

/// One jump component: displacement `(gamma1, gamma2)` driven by a finite
/// mark measure. Densities are turned into atoms on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpComponent {
    pub gamma1: Expr,
    pub gamma2: Expr,
    pub mark_dim: usize,
    pub atoms: Vec<Atom>,
    /// The density the atoms came from, if any.
    pub density: Option<DensitySpec>,
    pub gamma_bar: Expr,
    pub compensate_small_jumps: bool,
}

impl JumpComponent {
    pub fn with_atoms(gamma1: Expr, gamma2: Expr, mark_dim: usize, atoms: Vec<Atom>, gamma_bar: Expr) -> JumpComponent {
        JumpComponent { gamma1, gamma2, mark_dim, atoms, density: None, gamma_bar, compensate_small_jumps: false }
    }

    pub fn with_density(
        gamma1: Expr,
        gamma2: Expr,
        density: DensitySpec,
        gamma_bar: Expr,
    ) -> Result<JumpComponent, ModelError> {
        let atoms = density.discretize(density.nodes)?;
        Ok(JumpComponent {
            gamma1,
            gamma2,
            mark_dim: density.lower.len(),
            atoms,
            density: Some(density),
            gamma_bar,
            compensate_small_jumps: false,
        })
    }

    pub fn compensated(mut self, on: bool) -> JumpComponent {
        self.compensate_small_jumps = on;
        self
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn gamma_bar_at(&self, atom: &Atom) -> Result<f64, EvalError> {
        self.gamma_bar.evaluate(&EvalContext::new().with_marks(&atom.mark))
    }

    /// The displacement at `(t, x, y)` for one atom.
    pub fn gamma_at(&self, t: f64, x: f64, y: f64, atom: &Atom) -> Result<(f64, f64), EvalError> {
        let ctx = EvalContext::txy(t, x, y).with_marks(&atom.mark);
        Ok((self.gamma1.evaluate(&ctx)?, self.gamma2.evaluate(&ctx)?))
    }

    /// Whether the displacement depends on `x`.
    pub fn depends_on_x(&self) -> bool {
        self.gamma1.depends_on(Var::X) || self.gamma2.depends_on(Var::X)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl DomainBox {
    pub fn check(&self) -> Result<(), ModelError> {
        let finite = [self.x_lo, self.x_hi, self.y_lo, self.y_hi].iter().all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::InvalidBox("bounds must be finite".into()));
        }
        if !(self.x_lo < self.x_hi) {
            return Err(ModelError::InvalidBox(format!("x_lo={} must be below x_hi={}", self.x_lo, self.x_hi)));
        }
        if !(self.y_lo < self.y_hi) {
            return Err(ModelError::InvalidBox(format!("y_lo={} must be below y_hi={}", self.y_lo, self.y_hi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Continuation region `{x > x*(t, y)}`.
    ContinuationAbove,
    /// Continuation region `{x < x*(t, y)}`.
    ContinuationBelow,
}

impl Orientation {
    pub fn flipped(self) -> Orientation {
        match self {
            Orientation::ContinuationAbove => Orientation::ContinuationBelow,
            Orientation::ContinuationBelow => Orientation::ContinuationAbove,
        }
    }
}

/// Boundary rule on one face of the truncated box.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum FaceRule {
    /// Dirichlet data equal to the gain.
    #[default]
    Gain,
    /// Dirichlet data given by an expression in `(t, x, y)`.
    Expression(Expr),
    /// Linear extrapolation from the two adjacent interior nodes.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FarField {
    pub x_lo: FaceRule,
    pub x_hi: FaceRule,
    pub y_lo: FaceRule,
    pub y_hi: FaceRule,
}

impl FarField {
    pub fn uniform(rule: FaceRule) -> FarField {
        FarField { x_lo: rule.clone(), x_hi: rule.clone(), y_lo: rule.clone(), y_hi: rule }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub coefficients: CoefficientSet,
    pub gain: GainSpec,
    pub jumps: Vec<JumpComponent>,
    pub domain: DomainBox,
    pub horizon: f64,
    pub orientation: Orientation,
    pub far_field: FarField,
}

impl ProblemSpec {
    /// A jump-free problem with Dirichlet-gain far field and continuation
    /// above the surface.
    pub fn new(coefficients: CoefficientSet, gain: GainSpec, domain: DomainBox, horizon: f64) -> ProblemSpec {
        ProblemSpec {
            coefficients,
            gain,
            jumps: Vec::new(),
            domain,
            horizon,
            orientation: Orientation::ContinuationAbove,
            far_field: FarField::default(),
        }
    }

    pub fn build_grid(&self, nt: usize, nx: usize, ny: usize) -> Result<Grid, ModelError> {
        Grid::new(self.horizon, &self.domain, nt, nx, ny)
    }

    /// Whether any quantity depends on time.
    pub fn is_time_homogeneous(&self) -> bool {
        let c = &self.coefficients;
        let mut exprs = vec![&c.alpha1, &c.alpha2, &c.beta1, &c.beta2, &c.r, &self.gain.g];
        exprs.extend(c.running_cost.iter());
        exprs.extend(self.jumps.iter().flat_map(|j| [&j.gamma1, &j.gamma2]));
        !exprs.iter().any(|e| e.depends_on(Var::T))
    }

    /// The mirror image under `x -> -x` with the orientation flipped.
    ///
    /// Solving the mirrored problem gives the mirrored value field, so the
    /// continuation-below case can reuse every continuation-above routine.
    pub fn reflected(&self) -> ProblemSpec {
        let minus_x = Expr::Unary(UnaryOp::Neg, Box::new(Expr::Var(Var::X)));
        let m = |e: &Expr| e.substitute(Var::X, &minus_x);
        let mneg = |e: &Expr| Expr::Unary(UnaryOp::Neg, Box::new(m(e)));
        let face = |f: &FaceRule| match f {
            FaceRule::Expression(e) => FaceRule::Expression(m(e)),
            other => other.clone(),
        };
        let c = &self.coefficients;
        ProblemSpec {
            coefficients: CoefficientSet {
                alpha1: mneg(&c.alpha1),
                alpha2: m(&c.alpha2),
                beta1: m(&c.beta1),
                beta2: m(&c.beta2),
                rho: -c.rho,
                r: m(&c.r),
                running_cost: c.running_cost.as_ref().map(m),
            },
            gain: GainSpec { g: m(&self.gain.g), terminal_g: self.gain.terminal_g.as_ref().map(m) },
            jumps: self
                .jumps
                .iter()
                .map(|j| JumpComponent { gamma1: mneg(&j.gamma1), gamma2: m(&j.gamma2), ..j.clone() })
                .collect(),
            domain: DomainBox {
                x_lo: -self.domain.x_hi,
                x_hi: -self.domain.x_lo,
                y_lo: self.domain.y_lo,
                y_hi: self.domain.y_hi,
            },
            horizon: self.horizon,
            orientation: self.orientation.flipped(),
            far_field: FarField {
                x_lo: face(&self.far_field.x_hi),
                x_hi: face(&self.far_field.x_lo),
                y_lo: face(&self.far_field.y_lo),
                y_hi: face(&self.far_field.y_hi),
            },
        }
    }
}

/// Verification window `[t1, t2] x [x_d, x_u] x [y_d, y_u]`.
///
/// A node belongs to the window when its coordinates lie in the closed
/// intervals; the window must keep two cells of margin from the spatial
/// faces and end at least one time step before the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowU {
    pub t1: f64,
    pub t2: f64,
    pub x_d: f64,
    pub x_u: f64,
    pub y_d: f64,
    pub y_u: f64,
}

/// Node index ranges (inclusive) covered by a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowIndex {
    pub k0: usize,
    pub k1: usize,
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl WindowIndex {
    pub fn contains(&self, k: usize, i: usize, j: usize) -> bool {
        (self.k0..=self.k1).contains(&k) && (self.i0..=self.i1).contains(&i) && (self.j0..=self.j1).contains(&j)
    }

    pub fn contains_xy(&self, i: usize, j: usize) -> bool {
        (self.i0..=self.i1).contains(&i) && (self.j0..=self.j1).contains(&j)
    }

    /// All `(k, i, j)` triples in the window.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (self.k0..=self.k1)
            .flat_map(move |k| (self.i0..=self.i1).flat_map(move |i| (self.j0..=self.j1).map(move |j| (k, i, j))))
    }
}

fn closed_range(lo: f64, hi: f64, coords: &[f64], h: f64) -> Option<(usize, usize)> {
    let eps = 1e-9 * h;
    let first = coords.iter().position(|&c| c >= lo - eps)?;
    let last = coords.iter().rposition(|&c| c <= hi + eps)?;
    (first <= last).then_some((first, last))
}

impl WindowU {
    pub fn new(t: (f64, f64), x: (f64, f64), y: (f64, f64)) -> WindowU {
        WindowU { t1: t.0, t2: t.1, x_d: x.0, x_u: x.1, y_d: y.0, y_u: y.1 }
    }

    /// Checks the margins against `grid` and returns the covered indices.
    pub fn index(&self, grid: &Grid) -> Result<WindowIndex, ModelError> {
        let bad = |m: String| Err(ModelError::InvalidWindow(m));
        if !(self.t1 < self.t2 && self.x_d < self.x_u && self.y_d < self.y_u) {
            return bad("each interval needs lower < upper".into());
        }
        let eps = 1e-9;
        if self.t1 < -eps * grid.dt || self.t2 > grid.horizon() - grid.dt * (1.0 - eps) {
            return bad(format!("time interval must lie in [0, T - dt] = [0, {}]", grid.horizon() - grid.dt));
        }
        let (xl, xh) = (grid.x[0] + 2.0 * grid.hx, grid.x[grid.nx - 1] - 2.0 * grid.hx);
        if self.x_d < xl - eps * grid.hx || self.x_u > xh + eps * grid.hx {
            return bad(format!("x interval must keep two cells from the faces: [{xl}, {xh}]"));
        }
        let (yl, yh) = (grid.y[0] + 2.0 * grid.hy, grid.y[grid.ny - 1] - 2.0 * grid.hy);
        if self.y_d < yl - eps * grid.hy || self.y_u > yh + eps * grid.hy {
            return bad(format!("y interval must keep two cells from the faces: [{yl}, {yh}]"));
        }
        let empty = || ModelError::InvalidWindow("window contains no grid node".into());
        let (k0, k1) = closed_range(self.t1, self.t2, &grid.t, grid.dt).ok_or_else(empty)?;
        let (i0, i1) = closed_range(self.x_d, self.x_u, &grid.x, grid.hx).ok_or_else(empty)?;
        let (j0, j1) = closed_range(self.y_d, self.y_u, &grid.y, grid.hy).ok_or_else(empty)?;
        Ok(WindowIndex { k0, k1, i0, i1, j0, j1 })
    }

    pub fn reflected(&self) -> WindowU {
        WindowU { x_d: -self.x_u, x_u: -self.x_d, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::parse;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn window_margins() {
        let b = DomainBox { x_lo: 0.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 };
        let g = Grid::new(1.0, &b, 11, 11, 11).unwrap();
        let w = WindowU::new((0.0, 0.5), (0.2, 0.8), (0.25, 0.75));
        let ix = w.index(&g).unwrap();
        assert_eq!((ix.k0, ix.k1, ix.i0, ix.i1, ix.j0, ix.j1), (0, 5, 2, 8, 3, 7));
        assert!(WindowU::new((0.0, 0.5), (0.1, 0.8), (0.3, 0.7)).index(&g).is_err());
        assert!(WindowU::new((0.0, 1.0), (0.2, 0.8), (0.3, 0.7)).index(&g).is_err());
        assert!(WindowU::new((0.0, 0.9), (0.2, 0.8), (0.3, 0.7)).index(&g).is_ok());
    }

    #[test]
    fn density_becomes_atoms() {
        let d = DensitySpec { density: p("2"), lower: vec![0.0], upper: vec![1.5], nodes: 5 };
        let atoms = d.discretize(5).unwrap();
        assert_eq!(atoms.len(), 5);
        let mass: f64 = atoms.iter().map(|a| a.weight).sum();
        assert!((mass - 3.0).abs() < 1e-12);
        let neg = DensitySpec { density: p("0 - 1"), ..d };
        assert!(neg.discretize(3).is_err());
    }

    #[test]
    fn reflection_is_an_involution_pointwise() {
        let mut c = CoefficientSet::zero();
        c.alpha1 = p("0.05*x + y");
        c.beta1 = p("0.02*x*x");
        c.rho = 0.3;
        let mut spec = ProblemSpec::new(c, GainSpec::new(p("max(100 - x, 0)")), DomainBox { x_lo: 0.0, x_hi: 200.0, y_lo: 0.0, y_hi: 1.0 }, 1.0);
        spec.jumps.push(JumpComponent::with_atoms(p("0.1*x"), p("0"), 1, vec![Atom { mark: vec![1.0], weight: 0.5 }], p("1")));
        let r = spec.reflected();
        assert_eq!(r.domain.x_lo, -200.0);
        assert_eq!(r.orientation, Orientation::ContinuationBelow);
        assert_eq!(r.coefficients.rho, -0.3);
        // alpha1 at -x is minus the original drift at x
        assert_eq!(r.coefficients.alpha1.eval_txy(0.0, -10.0, 0.5).unwrap(), -(0.5 + 0.5));
        assert_eq!(r.gain.g.eval_txy(0.0, -90.0, 0.0).unwrap(), 10.0);
        let rr = r.reflected();
        for x in [3.0, 50.0, 120.0] {
            let a = spec.coefficients.alpha1.eval_txy(0.0, x, 0.2).unwrap();
            let b = rr.coefficients.alpha1.eval_txy(0.0, x, 0.2).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        let atom = &spec.jumps[0].atoms[0];
        assert_eq!(r.jumps[0].gamma_at(0.0, -10.0, 0.0, atom).unwrap().0, -1.0);
    }
}
