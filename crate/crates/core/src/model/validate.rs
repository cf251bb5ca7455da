use rayon::prelude::*;
use serde::Serialize;

use super::{Grid, ProblemSpec};
use crate::exprs::{EvalContext, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
}

impl Diagnostic {
    fn new(severity: Severity, code: &'static str, message: impl Into<String>) -> Diagnostic {
        Diagnostic { severity, code, message: message.into() }
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Smallest value of `e` over all nodes, with its location, or the first
/// evaluation failure.
fn scan(e: &Expr, grid: &Grid) -> Result<(f64, [f64; 3], f64), String> {
    let per_level: Vec<Result<(f64, [f64; 3], f64), String>> = grid
        .t
        .par_iter()
        .map(|&t| {
            let mut min = (f64::INFINITY, [t, 0.0, 0.0]);
            let mut max_abs = 0.0f64;
            for &x in &grid.x {
                for &y in &grid.y {
                    let v = e
                        .evaluate(&EvalContext::txy(t, x, y))
                        .map_err(|err| format!("{err} at (t={t}, x={x}, y={y})"))?;
                    if v < min.0 {
                        min = (v, [t, x, y]);
                    }
                    max_abs = max_abs.max(v.abs());
                }
            }
            Ok((min.0, min.1, max_abs))
        })
        .collect();
    let mut best = (f64::INFINITY, [0.0; 3], 0.0f64);
    for r in per_level {
        let (m, at, a) = r?;
        if m < best.0 {
            best.0 = m;
            best.1 = at;
        }
        best.2 = best.2.max(a);
    }
    Ok(best)
}

/// Checks a problem against its invariants on `grid`. Never fails; every
/// finding is returned as a diagnostic.
pub fn validate_spec(p: &ProblemSpec, grid: &Grid) -> Vec<Diagnostic> {
    use Severity::*;
    let mut out = Vec::new();
    if let Err(e) = p.domain.check() {
        out.push(Diagnostic::new(Error, "domain", e.to_string()));
    }
    if !(p.horizon > 0.0 && p.horizon.is_finite()) {
        out.push(Diagnostic::new(Error, "horizon", format!("horizon must be positive, got {}", p.horizon)));
    }
    if grid.domain() != p.domain || (grid.horizon() - p.horizon).abs() > 1e-12 * p.horizon.abs().max(1.0) {
        out.push(Diagnostic::new(Error, "grid", "grid does not cover the problem box and horizon"));
    }

    let rho = p.coefficients.rho;
    if !(-1.0..=1.0).contains(&rho) {
        out.push(Diagnostic::new(Error, "rho", format!("rho out of [-1,1]: {rho}")));
    } else if rho.abs() > 0.95 {
        out.push(Diagnostic::new(
            Warning,
            "rho",
            format!("|rho| = {} > 0.95: the mixed-derivative stencil may lose monotonicity", rho.abs()),
        ));
    }

    let c = &p.coefficients;
    let mut named = vec![("alpha1", &c.alpha1), ("alpha2", &c.alpha2), ("r", &c.r), ("g", &p.gain.g)];
    if let Some(f) = &c.running_cost {
        named.push(("running_cost", f));
    }
    for (name, e) in named {
        if let Err(msg) = scan(e, grid) {
            out.push(Diagnostic::new(Error, "evaluation", format!("{name}: {msg}")));
        }
    }
    if let Some(tg) = &p.gain.terminal_g {
        let last = grid.t[grid.nt - 1];
        let bad = grid.x.iter().flat_map(|&x| grid.y.iter().map(move |&y| (x, y))).find_map(|(x, y)| {
            tg.evaluate(&EvalContext::txy(last, x, y)).err().map(|e| format!("{e} at (x={x}, y={y})"))
        });
        if let Some(msg) = bad {
            out.push(Diagnostic::new(Error, "evaluation", format!("terminal_g: {msg}")));
        }
    }
    for (name, e) in [("beta1", &c.beta1), ("beta2", &c.beta2)] {
        match scan(e, grid) {
            Err(msg) => out.push(Diagnostic::new(Error, "evaluation", format!("{name}: {msg}"))),
            Ok((min, at, max_abs)) => {
                if min < 0.0 {
                    out.push(Diagnostic::new(
                        Error,
                        "diffusion-sign",
                        format!("{name} = {min} < 0 at (t={}, x={}, y={})", at[0], at[1], at[2]),
                    ));
                }
                if name == "beta2" && max_abs == 0.0 {
                    out.push(Diagnostic::new(
                        Warning,
                        "beta2-degenerate",
                        "beta2 vanishes identically: A3.1.ii-beta2pos (beta2 > 0) unverifiable; the solve may proceed",
                    ));
                }
            }
        }
    }

    for (n, jc) in p.jumps.iter().enumerate() {
        if jc.atoms.is_empty() {
            out.push(Diagnostic::new(Error, "jump-measure", format!("jump {n}: measure has no atoms")));
            continue;
        }
        let before = out.len();
        for (m, a) in jc.atoms.iter().enumerate() {
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                out.push(Diagnostic::new(Error, "jump-measure", format!("jump {n} atom {m}: weight {} not positive", a.weight)));
            }
            if a.mark.len() != jc.mark_dim {
                out.push(Diagnostic::new(
                    Error,
                    "jump-measure",
                    format!("jump {n} atom {m}: mark has {} coordinates, expected {}", a.mark.len(), jc.mark_dim),
                ));
            }
        }
        if out.len() > before {
            continue;
        }
        out.extend(gamma_bar_domination(n, p, grid));
        let mut sum_small = 0.0;
        let mut ok = true;
        for a in &jc.atoms {
            match jc.gamma_bar_at(a) {
                Ok(gb) => sum_small += a.weight * (gb * gb).min(1.0),
                Err(e) => {
                    ok = false;
                    out.push(Diagnostic::new(Error, "evaluation", format!("jump {n} gamma_bar: {e}")));
                    break;
                }
            }
        }
        if ok {
            out.push(Diagnostic::new(
                Info,
                "levy-sum",
                format!("jump {n}: sum w (gamma_bar^2 ^ 1) = {sum_small} (finite)"),
            ));
        }
    }
    out
}

/// Spot check of `gamma_bar >= |gamma|` at every spatial node on the first,
/// middle and last time levels.
fn gamma_bar_domination(n: usize, p: &ProblemSpec, grid: &Grid) -> Vec<Diagnostic> {
    let jc = &p.jumps[n];
    let levels = [0, grid.nt / 2, grid.nt - 1];
    let mut out = Vec::new();
    for a in &jc.atoms {
        let gb = match jc.gamma_bar_at(a) {
            Ok(v) => v,
            Err(_) => return out,
        };
        for &k in &levels {
            let t = grid.t[k];
            let worst = grid
                .x
                .par_iter()
                .map(|&x| {
                    let mut worst: Option<(f64, f64, f64)> = None;
                    for &y in &grid.y {
                        match jc.gamma_at(t, x, y, a) {
                            Ok((g1, g2)) => {
                                let norm = g1.hypot(g2);
                                if norm > gb * (1.0 + 1e-12) + 1e-300 && worst.is_none_or(|w| norm > w.0) {
                                    worst = Some((norm, x, y));
                                }
                            }
                            Err(_) => return Some((f64::NAN, x, y)),
                        }
                    }
                    worst
                })
                .reduce(|| None, |a, b| match (a, b) {
                    (Some(a), Some(b)) => Some(if a.0.is_nan() || a.0 >= b.0 { a } else { b }),
                    (a, b) => a.or(b),
                });
            if let Some((norm, x, y)) = worst {
                let msg = if norm.is_nan() {
                    format!("jump {n}: gamma not evaluable at (t={t}, x={x}, y={y}) for mark {:?}", a.mark)
                } else {
                    format!("jump {n}: |gamma| = {norm} exceeds gamma_bar = {gb} at (t={t}, x={x}, y={y}), mark {:?}", a.mark)
                };
                out.push(Diagnostic::new(Severity::Error, "gamma-bar", msg));
                return out;
            }
        }
    }
    out
}
