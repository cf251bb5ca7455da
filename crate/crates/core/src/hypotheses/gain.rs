use rayon::prelude::*;

use super::{CatalogOptions, CheckItem, HypothesisError, Node, Status};
use crate::exprs::{EvalContext, Expr, Var};
use crate::model::{Grid, ProblemSpec, WindowIndex, WindowU};
use crate::operators::ExprGenerator;

/// `h = (d/dt + L - r) g + f` on the window, widened by one node on each side
/// in `x` so that central differences exist on every window node. `f` is the
/// running cost.
#[derive(Debug, Clone)]
pub struct HField {
    pub ix: WindowIndex,
    pub i_lo: usize,
    pub i_hi: usize,
    nxw: usize,
    nyw: usize,
    pub values: Vec<f64>,
}

impl HField {
    pub fn at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[((k - self.ix.k0) * self.nxw + (i - self.i_lo)) * self.nyw + (j - self.ix.j0)]
    }

    pub(super) fn dx_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Forms `h` node by node with symbolic derivatives of `g` and the jump part
/// taken exactly at the post-jump positions.
pub fn compute_h(p: &ProblemSpec, grid: &Grid, w: &WindowU, g: &Expr) -> Result<HField, HypothesisError> {
    let ix = w.index(grid)?;
    let (i_lo, i_hi) = (ix.i0 - 1, ix.i1 + 1);
    let gen = ExprGenerator::new(g);
    let f = p.coefficients.running_cost.as_ref();
    let levels: Vec<Result<Vec<f64>, HypothesisError>> = (ix.k0..=ix.k1)
        .into_par_iter()
        .map(|k| {
            let t = grid.t[k];
            let mut out = Vec::with_capacity((i_hi - i_lo + 1) * (ix.j1 - ix.j0 + 1));
            for i in i_lo..=i_hi {
                for j in ix.j0..=ix.j1 {
                    let (x, y) = (grid.x[i], grid.y[j]);
                    let mut h = gen.apply(p, t, x, y).map_err(|e| HypothesisError::at(e, t, x, y))?;
                    if let Some(f) = f {
                        h += f.eval_txy(t, x, y).map_err(|e| HypothesisError::at(e, t, x, y))?;
                    }
                    out.push(h);
                }
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::new();
    for l in levels {
        values.extend(l?);
    }
    Ok(HField { ix, i_lo, i_hi, nxw: i_hi - i_lo + 1, nyw: ix.j1 - ix.j0 + 1, values })
}

/// Minimum over the window of the central difference of `h / beta2` in `x`,
/// reported as the measured `delta`.
pub fn check_delta_condition(h: &HField, p: &ProblemSpec, grid: &Grid, opts: &CatalogOptions) -> CheckItem {
    const ID: &str = "A3.1.iii-delta";
    let ix = h.ix;
    let mut ratio = Vec::with_capacity(h.values.len());
    for k in ix.k0..=ix.k1 {
        for i in h.i_lo..=h.i_hi {
            for j in ix.j0..=ix.j1 {
                match p.coefficients.beta2.eval_txy(grid.t[k], grid.x[i], grid.y[j]) {
                    Ok(b) if b > 0.0 => ratio.push(h.at(k, i, j) / b),
                    Ok(b) => {
                        return CheckItem::skip(ID, Status::Unverifiable, format!("beta2 = {b} is not positive near U"));
                    }
                    Err(e) => return CheckItem::skip(ID, Status::Unverifiable, format!("beta2 not evaluable near U: {e}")),
                }
            }
        }
    }
    let scale = ratio.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let at = |k: usize, i: usize, j: usize| ratio[((k - ix.k0) * h.nxw + (i - h.i_lo)) * h.nyw + (j - ix.j0)];
    let (mut min, mut wit) = (f64::INFINITY, (0, 0, 0));
    for (k, i, j) in ix.nodes() {
        let d = (at(k, i + 1, j) - at(k, i - 1, j)) / (2.0 * grid.hx);
        if d < min {
            min = d;
            wit = (k, i, j);
        }
    }
    let tol = opts.rel_tol * (1.0 + scale) / grid.hx;
    let status = if min > tol { Status::Pass } else { Status::Fail };
    CheckItem::new(ID, status, min, Some(Node::of(grid, wit.0, wit.1, wit.2)), "min over U of d/dx (h / beta2)")
}

/// `beta2 > 0` on the window, and finiteness of every local coefficient and
/// of `d/dx beta_i` there. The second element lists difference-quotient
/// growth ratios of the coefficients under halving of the step, as a
/// Hölder probe that carries no status.
pub fn check_coefficient_regularity(p: &ProblemSpec, grid: &Grid, w: &WindowU) -> Result<(Vec<CheckItem>, Vec<String>), HypothesisError> {
    let ix = w.index(grid)?;
    let c = &p.coefficients;
    let dbeta1 = c.beta1.differentiate(Var::X);
    let dbeta2 = c.beta2.differentiate(Var::X);
    let named: [(&str, &Expr); 7] = [
        ("alpha1", &c.alpha1),
        ("alpha2", &c.alpha2),
        ("beta1", &c.beta1),
        ("beta2", &c.beta2),
        ("r", &c.r),
        ("d/dx beta1", &dbeta1),
        ("d/dx beta2", &dbeta2),
    ];

    let mut min_b2 = (f64::INFINITY, None);
    let mut b2_err = None;
    let mut reg_fail: Option<(String, Node)> = None;
    for (k, i, j) in ix.nodes() {
        let node = Node::of(grid, k, i, j);
        let ctx = EvalContext::txy(node.t, node.x, node.y);
        for (name, e) in &named {
            match e.evaluate(&ctx) {
                Ok(v) if v.is_finite() => {
                    if *name == "beta2" && v < min_b2.0 {
                        min_b2 = (v, Some(node));
                    }
                }
                Ok(v) => {
                    reg_fail.get_or_insert((format!("{name} = {v}"), node));
                }
                Err(err) => {
                    if *name == "beta2" {
                        b2_err.get_or_insert((err.to_string(), node));
                    }
                    reg_fail.get_or_insert((format!("{name}: {err}"), node));
                }
            }
        }
    }
    let beta2pos = match b2_err {
        Some((msg, node)) => CheckItem::new("A3.1.ii-beta2pos", Status::Unverifiable, f64::NAN, Some(node), msg),
        None if c.beta2.is_zero() => CheckItem::new(
            "A3.1.ii-beta2pos",
            Status::Unverifiable,
            0.0,
            None,
            "beta2 vanishes identically: degenerate y-diffusion",
        ),
        None => {
            let status = if min_b2.0 > 0.0 { Status::Pass } else { Status::Fail };
            CheckItem::new("A3.1.ii-beta2pos", status, min_b2.0, min_b2.1, "min beta2 over U")
        }
    };
    let regularity = match reg_fail {
        Some((msg, node)) => CheckItem::new("A3.1.ii-regularity", Status::Fail, -1.0, Some(node), msg),
        None => CheckItem::new(
            "A3.1.ii-regularity",
            Status::PassProxy,
            0.0,
            None,
            "coefficients and d/dx beta_i finite on U without kink hits",
        ),
    };

    let mut holder = Vec::new();
    for (name, e) in named.iter().take(5) {
        if let Some(r) = quotient_growth(e, grid, &ix) {
            holder.push(format!("{name}: x-difference-quotient growth under step halving {r:.3}"));
        }
    }
    Ok((vec![beta2pos, regularity], holder))
}

/// `max |D_h| / max |D_2h|` of the `x`-difference quotients over the window,
/// about 1 for Lipschitz data and growing like `2^(1-a)` for `a`-Hölder cusps.
fn quotient_growth(e: &Expr, grid: &Grid, ix: &WindowIndex) -> Option<f64> {
    if !e.depends_on(Var::X) {
        return None;
    }
    let mut d1: f64 = 0.0;
    let mut d2: f64 = 0.0;
    for (k, i, j) in ix.nodes() {
        let (t, y) = (grid.t[k], grid.y[j]);
        let v = |ii: usize| e.eval_txy(t, grid.x[ii], y).ok();
        if let (Some(a), Some(b), Some(c)) = (v(i - 1), v(i), v(i + 1)) {
            d1 = d1.max((b - a).abs() / grid.hx);
            d2 = d2.max((c - a).abs() / (2.0 * grid.hx));
        }
    }
    (d2 > 0.0).then(|| d1 / d2)
}
