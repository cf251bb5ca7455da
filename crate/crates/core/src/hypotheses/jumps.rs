use rayon::prelude::*;
use serde::Serialize;

use super::{CatalogOptions, CheckItem, HypothesisError, Node, Status, UField};
use crate::exprs::{EvalContext, Expr, Var};
use crate::model::{Field2, Grid, ProblemSpec, WindowIndex, WindowU};
use crate::operators::{apply_jump_operator, build_jump_quadrature, gradient, levy_integrability_report, Exterior, JumpQuadrature};

const NO_JUMPS: &str = "no jump component (A = 0)";
const NO_U: &str = "no value function supplied";

/// `Au` and the jump quadrature at every window level.
struct JumpLevels {
    k0: usize,
    quad: Vec<JumpQuadrature>,
    au: Vec<Field2>,
}

impl JumpLevels {
    fn build(p: &ProblemSpec, u: &UField, ix: &WindowIndex) -> Result<JumpLevels, HypothesisError> {
        let grid = &u.grid;
        let levels: Vec<Result<(JumpQuadrature, Field2), HypothesisError>> = (ix.k0..=ix.k1)
            .into_par_iter()
            .map(|k| {
                let q = build_jump_quadrature(p, grid, k).map_err(|e| HypothesisError::at(e, grid.t[k], f64::NAN, f64::NAN))?;
                let au = apply_jump_operator(&u.field(k), None, &q, grid, Exterior::Extrapolate);
                Ok((q, au))
            })
            .collect();
        let mut quad = Vec::with_capacity(levels.len());
        let mut au = Vec::with_capacity(levels.len());
        for l in levels {
            let (q, a) = l?;
            quad.push(q);
            au.push(a);
        }
        Ok(JumpLevels { k0: ix.k0, quad, au })
    }

    fn au(&self, k: usize, i: usize, j: usize) -> f64 {
        self.au[k - self.k0].at(i, j)
    }
}

/// Discrepancy between the difference quotient of `Au` in `x` and the
/// quadrature `sum_m w_m d/dx u(dest_m) (1 + d/dx gamma1)` on stopped window
/// nodes away from the surface, together with the flatness of `u` there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    pub max_discrepancy: f64,
    pub max_lhs: f64,
    pub max_rhs: f64,
    pub max_u: f64,
    pub max_dxu: f64,
    pub max_dyu: f64,
    pub nodes: usize,
    pub witness: Node,
}

/// Checks the jump-derivative identity on stopped window nodes whose
/// neighbours within `standoff` cells in `x` are stopped too.
pub fn jump_derivative_identity(u: &UField, p: &ProblemSpec, w: &WindowU, standoff: usize) -> Result<IdentityReport, HypothesisError> {
    let grid = &u.grid;
    let ix = w.index(grid)?;
    let eligible = u.deep_stopped(&ix, standoff);
    if eligible.is_empty() {
        return Err(HypothesisError::NoEligibleNodes);
    }
    let levels = JumpLevels::build(p, u, &ix)?;
    identity_on(u, p, &levels, &eligible)
}

fn identity_on(u: &UField, p: &ProblemSpec, levels: &JumpLevels, eligible: &[(usize, usize, usize)]) -> Result<IdentityReport, HypothesisError> {
    let grid = &u.grid;
    let dgamma: Vec<Expr> = p.jumps.iter().map(|jc| jc.gamma1.differentiate(Var::X)).collect();
    let mut gx_levels: Vec<Option<Field2>> = vec![None; levels.au.len()];
    let mut rep = IdentityReport {
        max_discrepancy: 0.0,
        max_lhs: 0.0,
        max_rhs: 0.0,
        max_u: 0.0,
        max_dxu: 0.0,
        max_dyu: 0.0,
        nodes: eligible.len(),
        witness: Node::of(grid, eligible[0].0, eligible[0].1, eligible[0].2),
    };
    for &(k, i, j) in eligible {
        let gx = gx_levels[k - levels.k0].get_or_insert_with(|| gradient(&u.field(k), grid).0);
        let lhs = (levels.au(k, i + 1, j) - levels.au(k, i - 1, j)) / (2.0 * grid.hx);
        let node = i * grid.ny + j;
        let (t, x, y) = (grid.t[k], grid.x[i], grid.y[j]);
        let mut rhs = 0.0;
        for (c, jc) in p.jumps.iter().enumerate() {
            let comp = &levels.quad[k - levels.k0].components[c];
            for (m, atom) in jc.atoms.iter().enumerate() {
                let factor = if dgamma[c].is_zero() {
                    1.0
                } else {
                    let ctx = EvalContext::txy(t, x, y).with_marks(&atom.mark);
                    1.0 + dgamma[c].evaluate(&ctx).map_err(|e| HypothesisError::at(e, t, x, y))?
                };
                rhs += comp.atom_weights[m] * comp.destination(node, m).interpolate(gx) * factor;
            }
        }
        let diff = (lhs - rhs).abs();
        if diff > rep.max_discrepancy {
            rep.max_discrepancy = diff;
            rep.witness = Node { t, x, y };
        }
        rep.max_lhs = rep.max_lhs.max(lhs.abs());
        rep.max_rhs = rep.max_rhs.max(rhs.abs());
        rep.max_u = rep.max_u.max(u.at(k, i, j).abs());
        rep.max_dxu = rep.max_dxu.max(u.dx(k, i, j).abs());
        rep.max_dyu = rep.max_dyu.max(((u.at(k, i, j + 1) - u.at(k, i, j - 1)) / (2.0 * grid.hy)).abs());
    }
    Ok(rep)
}

/// Items A4.1-*, A4.3-*, L4.4, L4.5.a-d, C4.6 and R4.7, in catalog order.
pub fn check_jump_assumptions(
    p: &ProblemSpec,
    grid: &Grid,
    w: &WindowU,
    u: Option<&UField>,
    opts: &CatalogOptions,
) -> Result<Vec<CheckItem>, HypothesisError> {
    const IDS: [&str; 11] = [
        "A4.1-Au-continuity-proxy",
        "A4.1-assA",
        "A4.3-support",
        "A4.3-gamma-bound",
        "L4.4-integrability",
        "L4.5.a",
        "L4.5.b",
        "L4.5.c",
        "L4.5.d",
        "C4.6-applicable",
        "R4.7-relaxed",
    ];
    let ix = w.index(grid)?;
    if p.jumps.is_empty() {
        return Ok(IDS.iter().map(|id| CheckItem::skip(id, Status::NotApplicable, NO_JUMPS)).collect());
    }
    let support = check_support(p);
    let gamma_bound = check_gamma_bound(p, grid, &ix, opts);
    let integrability = check_integrability(p, opts);
    let l45a = check_dbeta2(p, grid, &ix, opts);
    let l45b = check_dgamma(p, grid, &ix, opts, false);
    let l45c = check_dgamma(p, grid, &ix, opts, true);

    let Some(uf) = u else {
        let c46 = if p.jumps.iter().any(|jc| jc.depends_on_x()) {
            CheckItem::skip(IDS[9], Status::NotApplicable, "jump sizes depend on x")
        } else {
            CheckItem::skip(IDS[9], Status::Unverifiable, NO_U)
        };
        return Ok(vec![
            CheckItem::skip(IDS[0], Status::Unverifiable, NO_U),
            CheckItem::skip(IDS[1], Status::Unverifiable, NO_U),
            support,
            gamma_bound,
            integrability,
            l45a,
            l45b,
            l45c,
            CheckItem::skip(IDS[8], Status::Unverifiable, NO_U),
            c46,
            CheckItem::skip(IDS[10], Status::Unverifiable, NO_U),
        ]);
    };
    let levels = JumpLevels::build(p, uf, &ix)?;
    let mass: f64 = p.jumps.iter().map(|jc| jc.total_mass().abs()).sum();
    let eligible = uf.deep_stopped(&ix, opts.standoff);
    let reach = reach_set(uf, &ix, &levels);
    let (l45d, r47) = check_dxu_partition(uf, &ix, &reach, opts);
    Ok(vec![
        check_au_continuity(uf, &ix, &levels, mass, opts),
        check_ass_a(p, uf, &levels, &eligible, mass, opts),
        support,
        gamma_bound,
        integrability,
        l45a,
        l45b,
        l45c,
        l45d,
        check_c46_applicable(p, uf, &levels, &eligible, mass, opts)?,
        r47,
    ])
}

fn check_support(p: &ProblemSpec) -> CheckItem {
    const ID: &str = "A4.3-support";
    let note = "(A.i) boundedness of u is vacuous on a truncated domain and not checked";
    let mut radius: f64 = 0.0;
    for (c, jc) in p.jumps.iter().enumerate() {
        if let Some(d) = &jc.density {
            if d.lower.iter().chain(&d.upper).any(|b| !b.is_finite()) {
                return CheckItem::new(ID, Status::Fail, f64::INFINITY, None, format!("jump {c}: unbounded density truncation; {note}"));
            }
        }
        for a in &jc.atoms {
            let n = a.mark.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !n.is_finite() {
                return CheckItem::new(ID, Status::Fail, f64::INFINITY, None, format!("jump {c}: atom at {:?} outside every compact; {note}", a.mark));
            }
            radius = radius.max(n);
        }
    }
    CheckItem::new(ID, Status::Pass, radius, None, format!("margin is the support radius; {note}"))
}

fn check_gamma_bound(p: &ProblemSpec, grid: &Grid, ix: &WindowIndex, opts: &CatalogOptions) -> CheckItem {
    const ID: &str = "A4.3-gamma-bound";
    let mut min = (f64::INFINITY, None);
    for (c, jc) in p.jumps.iter().enumerate() {
        for a in &jc.atoms {
            let gb = match jc.gamma_bar_at(a) {
                Ok(v) => v,
                Err(e) => return CheckItem::new(ID, Status::Fail, f64::NAN, None, format!("jump {c}: gamma_bar: {e}")),
            };
            for (k, i, j) in ix.nodes() {
                let node = Node::of(grid, k, i, j);
                match jc.gamma_at(node.t, node.x, node.y, a) {
                    Ok((g1, g2)) => {
                        let slack = gb - g1.hypot(g2);
                        if slack.is_nan() || slack < min.0 {
                            min = (slack, Some(node));
                        }
                    }
                    Err(e) => return CheckItem::new(ID, Status::Fail, f64::NAN, Some(node), format!("jump {c}: gamma: {e}")),
                }
            }
        }
    }
    let ok = min.0.is_finite() && min.0 >= -opts.rel_tol * (1.0 + min.0.abs());
    let status = if ok { Status::Pass } else { Status::Fail };
    CheckItem::new(ID, status, min.0, min.1, "min over U and atoms of gamma_bar - |gamma|")
}

fn check_integrability(p: &ProblemSpec, opts: &CatalogOptions) -> CheckItem {
    const ID: &str = "L4.4-integrability";
    let mut worst = (opts.divergence_growth, String::from("sum w (gamma_bar ^ 1) finite"));
    for (c, jc) in p.jumps.iter().enumerate() {
        let rep = match levy_integrability_report(jc) {
            Ok(r) => r,
            Err(e) => return CheckItem::new(ID, Status::Fail, f64::NAN, None, format!("jump {c}: {e}")),
        };
        if !rep.finite_gammabar {
            return CheckItem::new(ID, Status::Fail, f64::NEG_INFINITY, None, format!("jump {c}: sum is {}", rep.sum_gammabar));
        }
        let Some(d) = &jc.density else { continue };
        let fine = d.discretize(4 * d.nodes).map_err(|e| e.to_string()).and_then(|atoms| {
            let mut s = 0.0;
            for a in &atoms {
                s += a.weight * jc.gamma_bar_at(a).map_err(|e| e.to_string())?.min(1.0);
            }
            Ok(s)
        });
        match fine {
            Ok(s4) => {
                let growth = if rep.sum_gammabar > 0.0 { s4 / rep.sum_gammabar - 1.0 } else { 0.0 };
                let slack = opts.divergence_growth - growth;
                if slack < worst.0 {
                    worst = (slack, format!("jump {c}: quadrature sum grows by {:.1}% under x4 nodes", 100.0 * growth));
                }
            }
            Err(e) => return CheckItem::new(ID, Status::Fail, f64::NAN, None, format!("jump {c}: refined quadrature: {e}")),
        }
    }
    let status = if worst.0 >= 0.0 { Status::Pass } else { Status::Fail };
    CheckItem::new(ID, status, worst.0, None, worst.1)
}

fn check_dbeta2(p: &ProblemSpec, grid: &Grid, ix: &WindowIndex, opts: &CatalogOptions) -> CheckItem {
    const ID: &str = "L4.5.a";
    let d = p.coefficients.beta2.differentiate(Var::X);
    if d.is_zero() {
        return CheckItem::new(ID, Status::Pass, 0.0, None, "beta2 does not depend on x");
    }
    let mut max = (f64::NEG_INFINITY, None);
    for (k, i, j) in ix.nodes() {
        let node = Node::of(grid, k, i, j);
        match d.eval_txy(node.t, node.x, node.y) {
            Ok(v) if v > max.0 => max = (v, Some(node)),
            Ok(_) => {}
            Err(e) => return CheckItem::new(ID, Status::Fail, f64::NAN, Some(node), format!("d/dx beta2: {e}")),
        }
    }
    let status = if max.0 <= opts.rel_tol * (1.0 + max.0.abs()) { Status::Pass } else { Status::Fail };
    CheckItem::new(ID, status, -max.0, max.1, "-max over U of d/dx beta2")
}

/// L4.5.b (`second == false`): `1 + d/dx gamma1 >= 0`; L4.5.c: `d/dx gamma2 = 0`.
fn check_dgamma(p: &ProblemSpec, grid: &Grid, ix: &WindowIndex, opts: &CatalogOptions, second: bool) -> CheckItem {
    let id = if second { "L4.5.c" } else { "L4.5.b" };
    let mut worst = (f64::INFINITY, None);
    for (c, jc) in p.jumps.iter().enumerate() {
        let e = if second { &jc.gamma2 } else { &jc.gamma1 };
        let d = e.differentiate(Var::X);
        if d.is_zero() {
            worst.0 = worst.0.min(if second { 0.0 } else { 1.0 });
            continue;
        }
        for a in &jc.atoms {
            for (k, i, j) in ix.nodes() {
                let node = Node::of(grid, k, i, j);
                let ctx = EvalContext::txy(node.t, node.x, node.y).with_marks(&a.mark);
                match d.evaluate(&ctx) {
                    Ok(v) => {
                        let slack = if second { -v.abs() } else { 1.0 + v };
                        if slack < worst.0 {
                            worst = (slack, Some(node));
                        }
                    }
                    Err(err) => {
                        return CheckItem::new(id, Status::Fail, f64::NAN, Some(node), format!("jump {c}: x-derivative not continuous: {err}"));
                    }
                }
            }
        }
    }
    let structural = p.jumps.iter().all(|jc| !(if second { &jc.gamma2 } else { &jc.gamma1 }).depends_on(Var::X));
    let notes = match (second, structural) {
        (true, true) => "gamma2 has no x (structural)",
        (true, false) => "-max over U and atoms of |d/dx gamma2|",
        (false, true) => "gamma1 has no x (structural)",
        (false, false) => "min over U and atoms of 1 + d/dx gamma1",
    };
    let status = if worst.0 >= -opts.rel_tol { Status::Pass } else { Status::Fail };
    CheckItem::new(id, status, worst.0, worst.1, notes)
}

/// Nodes next to any post-jump position of a stopped window node, at the
/// same time level (cell corners carrying positive interpolation weight).
fn reach_set(u: &UField, ix: &WindowIndex, levels: &JumpLevels) -> Vec<bool> {
    let grid = &u.grid;
    let mut reach = vec![false; u.u.len()];
    for (k, i, j) in ix.nodes() {
        if !u.is_stopped(k, i, j) {
            continue;
        }
        let node = i * grid.ny + j;
        for comp in &levels.quad[k - levels.k0].components {
            for m in 0..comp.n_atoms() {
                let d = comp.destination(node, m);
                if d.outside {
                    continue;
                }
                let (i0, j0) = (d.i0 as usize, d.j0 as usize);
                let corners = [(i0, j0), (i0, j0 + 1), (i0 + 1, j0), (i0 + 1, j0 + 1)];
                for (c, &(ci, cj)) in corners.iter().enumerate() {
                    if d.weights[c] > 1e-12 {
                        reach[u.idx(k, ci, cj)] = true;
                    }
                }
            }
        }
    }
    reach
}

/// Splits the sign condition on `d/dx u` between L4.5.d (nodes of
/// `[0, T) x O` outside the window and outside the reach set) and R4.7 (reach
/// set outside the window). The window itself is covered by A3.1.iv-dxu.
fn check_dxu_partition(u: &UField, ix: &WindowIndex, reach: &[bool], opts: &CatalogOptions) -> (CheckItem, CheckItem) {
    let grid = &u.grid;
    let tol = opts.u_tol / grid.hx;
    let mut far = (f64::INFINITY, (0, 0, 0), 0usize);
    let mut near = (f64::INFINITY, (0, 0, 0), 0usize);
    for k in 0..grid.nt - 1 {
        for i in 1..grid.nx - 1 {
            for j in 0..grid.ny {
                if ix.contains(k, i, j) {
                    continue;
                }
                let d = u.dx(k, i, j);
                let slot = if reach[u.idx(k, i, j)] { &mut near } else { &mut far };
                slot.2 += 1;
                if d < slot.0 {
                    slot.0 = d;
                    slot.1 = (k, i, j);
                }
            }
        }
    }
    let item = |id: &'static str, (min, at, n): (f64, (usize, usize, usize), usize), what: &str| {
        if n == 0 {
            return CheckItem::skip(id, Status::Pass, format!("no {what} nodes outside U (covered by A3.1.iv-dxu)"));
        }
        let status = if min >= -tol { Status::Pass } else { Status::Fail };
        CheckItem::new(id, status, min, Some(Node::of(grid, at.0, at.1, at.2)), format!("min d/dx u over {n} {what} nodes outside U"))
    };
    (item("L4.5.d", far, "unreached"), item("R4.7-relaxed", near, "jump-reachable"))
}

/// Finite `Au` on the window and no grid-scale jumps along `x`, `y` or `t`.
fn check_au_continuity(u: &UField, ix: &WindowIndex, levels: &JumpLevels, mass: f64, opts: &CatalogOptions) -> CheckItem {
    const ID: &str = "A4.1-Au-continuity-proxy";
    let grid = &u.grid;
    for (k, i, j) in ix.nodes() {
        let v = levels.au(k, i, j);
        if !v.is_finite() {
            return CheckItem::new(ID, Status::Fail, f64::NAN, Some(Node::of(grid, k, i, j)), format!("Au = {v}"));
        }
    }
    let floor = 10.0 * opts.u_tol * (1.0 + mass);
    let mut worst = (0.0f64, "");
    let axes: [(&str, [usize; 3]); 3] = [("x", [0, 1, 0]), ("y", [0, 0, 1]), ("t", [1, 0, 0])];
    for (name, step) in axes {
        let (mut d1, mut d2) = (0.0f64, 0.0f64);
        for (k, i, j) in ix.nodes() {
            let ahead = |n: usize| {
                let (kk, ii, jj) = (k + n * step[0], i + n * step[1], j + n * step[2]);
                ix.contains(kk, ii, jj).then(|| levels.au(kk, ii, jj))
            };
            let a0 = levels.au(k, i, j);
            if let Some(a1) = ahead(1) {
                d1 = d1.max((a1 - a0).abs());
            }
            if let Some(a2) = ahead(2) {
                d2 = d2.max((a2 - a0).abs());
            }
        }
        if d1 > floor && d2 > 0.0 {
            let r = 2.0 * d1 / d2;
            if r > worst.0 {
                worst = (r, name);
            }
        }
    }
    let margin = opts.jump_ratio - worst.0;
    if margin <= 0.0 {
        return CheckItem::new(ID, Status::Fail, margin, None, format!("grid-scale jump of Au along {}", worst.1));
    }
    CheckItem::new(ID, Status::PassProxy, margin, None, "Au finite on U, increments scale with the step")
}

fn check_ass_a(p: &ProblemSpec, u: &UField, levels: &JumpLevels, eligible: &[(usize, usize, usize)], mass: f64, opts: &CatalogOptions) -> CheckItem {
    const ID: &str = "A4.1-assA";
    if eligible.is_empty() {
        return CheckItem::skip(ID, Status::NotApplicable, "no stopped window node two cells from the surface");
    }
    let grid = &u.grid;
    let beta2 = |k: usize, i: usize, j: usize| p.coefficients.beta2.eval_txy(grid.t[k], grid.x[i], grid.y[j]);
    let (mut min, mut at, mut b2min) = (f64::INFINITY, eligible[0], f64::INFINITY);
    for &(k, i, j) in eligible {
        let (bm, bp) = match (beta2(k, i - 1, j), beta2(k, i + 1, j)) {
            (Ok(a), Ok(b)) if a > 0.0 && b > 0.0 => (a, b),
            _ => return CheckItem::skip(ID, Status::Unverifiable, "beta2 not positive next to the stopping region"),
        };
        b2min = b2min.min(bm).min(bp);
        let d = (levels.au(k, i + 1, j) / bp - levels.au(k, i - 1, j) / bm) / (2.0 * grid.hx);
        if d < min {
            min = d;
            at = (k, i, j);
        }
    }
    let tol = opts.u_tol * (1.0 + mass) / (b2min * grid.hx);
    let status = if min >= -tol { Status::Pass } else { Status::Fail };
    CheckItem::new(ID, status, min, Some(Node::of(grid, at.0, at.1, at.2)), format!("min d/dx (Au / beta2) over {} stopped nodes", eligible.len()))
}

fn check_c46_applicable(
    p: &ProblemSpec,
    u: &UField,
    levels: &JumpLevels,
    eligible: &[(usize, usize, usize)],
    mass: f64,
    opts: &CatalogOptions,
) -> Result<CheckItem, HypothesisError> {
    const ID: &str = "C4.6-applicable";
    if p.jumps.iter().any(|jc| jc.depends_on_x()) {
        return Ok(CheckItem::skip(ID, Status::NotApplicable, "jump sizes depend on x; the general derivative formula applies"));
    }
    if eligible.is_empty() {
        return Ok(CheckItem::skip(ID, Status::NotApplicable, "no stopped window node two cells from the surface"));
    }
    let grid = &u.grid;
    let rep = identity_on(u, p, levels, eligible)?;
    let h = grid.hx.min(grid.hy);
    if rep.max_u > opts.u_tol || rep.max_dxu.max(rep.max_dyu) > opts.u_tol / h {
        return Ok(CheckItem::new(
            ID,
            Status::Fail,
            -rep.max_u.max(rep.max_dxu * h).max(rep.max_dyu * h),
            None,
            format!("u not flat on the stopping region: max|u| = {:.3e}, max|grad u| = {:.3e}", rep.max_u, rep.max_dxu.max(rep.max_dyu)),
        ));
    }
    let tol = opts.identity_rel_tol * rep.max_lhs.max(rep.max_rhs) + opts.u_tol * (1.0 + mass) / grid.hx;
    let status = if rep.max_discrepancy <= tol { Status::Pass } else { Status::Fail };
    Ok(CheckItem::new(
        ID,
        status,
        tol - rep.max_discrepancy,
        Some(rep.witness),
        format!("x-free jumps; derivative identity discrepancy {:.3e} on {} nodes", rep.max_discrepancy, rep.nodes),
    ))
}
