//! Synthetic problems for exercising the catalog: a baseline on which every
//! item passes, and one edit per catalog id that violates exactly that item.

use std::cell::OnceCell;

use super::{assumption_report, AssumptionReport, CatalogOptions, HypothesisError, UField, CATALOG};
use crate::exprs::{parse, parse_with, Expr, Symbols};
use crate::model::{Atom, CoefficientSet, DensitySpec, DomainBox, GainSpec, Grid, JumpComponent, ProblemSpec, WindowU};

fn e(s: &str) -> Expr {
    parse(s).expect("fixture expression")
}

fn em(s: &str, d: usize) -> Expr {
    parse_with(s, &Symbols::with_marks(d)).expect("fixture expression")
}

fn jump(g1: &str, g2: &str, w: f64, gbar: &str) -> JumpComponent {
    JumpComponent::with_atoms(em(g1, 1), em(g2, 1), 1, vec![Atom { mark: vec![0.0], weight: w }], em(gbar, 1))
}

/// Problem on `[-2, 2] x [0, 1]` with a prescribed `u` whose exercise set is
/// `x <= 0`.
#[derive(Debug, Clone)]
pub struct CatalogFixture {
    /// Catalog id violated by this fixture, or `"baseline"`.
    pub id: &'static str,
    pub problem: ProblemSpec,
    pub u: String,
}

impl CatalogFixture {
    pub fn baseline() -> CatalogFixture {
        let coefficients = CoefficientSet {
            alpha1: e("y + 0.15*x"),
            alpha2: e("0.2*(1 - y)"),
            beta1: e("0.05"),
            beta2: e("0.1"),
            rho: 0.0,
            r: e("0.05"),
            running_cost: None,
        };
        let domain = DomainBox { x_lo: -2.0, x_hi: 2.0, y_lo: 0.0, y_hi: 1.0 };
        let mut problem = ProblemSpec::new(coefficients, GainSpec::new(e("x")), domain, 1.0);
        problem.jumps.push(jump("0.05", "0", 0.5, "0.05"));
        CatalogFixture { id: "baseline", problem, u: "pos(x)^2".into() }
    }

    pub fn grid(&self) -> Grid {
        self.problem.build_grid(11, 81, 21).expect("fixture grid")
    }

    pub fn window() -> WindowU {
        WindowU::new((0.0, 0.5), (-1.0, 1.0), (0.25, 0.75))
    }

    pub fn u_field(&self, grid: &Grid) -> Result<UField, HypothesisError> {
        let u = e(&self.u);
        let failed = OnceCell::new();
        let field = UField::from_fn(
            grid,
            |t, x, y| {
                u.eval_txy(t, x, y).unwrap_or_else(|err| {
                    let _ = failed.set(HypothesisError::at(err, t, x, y));
                    f64::NAN
                })
            },
            |_, x, _| x <= 1e-12,
        );
        match failed.into_inner() {
            Some(err) => Err(err),
            None => Ok(field),
        }
    }

    pub fn report(&self) -> Result<AssumptionReport, HypothesisError> {
        let grid = self.grid();
        let uf = self.u_field(&grid)?;
        assumption_report(&self.problem, &grid, &Self::window(), Some(&uf), &CatalogOptions::default())
    }
}

/// One fixture per catalog id, in catalog order.
pub fn one_hot_fixtures() -> Vec<CatalogFixture> {
    type Edit = fn(&mut CatalogFixture);
    let edits: [Edit; 16] = [
        |f| f.problem.coefficients.beta2 = e("y - 0.5"),
        |f| f.problem.coefficients.beta1 = e("0.05 + 0.01*abs(x - 0.5)"),
        |f| f.problem.gain.g = e("x + 0.01*pos(x - 0.5)^2"),
        |f| f.problem.coefficients.alpha1 = e("y + 0.04*x"),
        |f| f.u.push_str(" - 3200*pos(0.5 - t)*pos(0.0625 - (y - 0.5)^2)*pos(0.04 - (x - 0.6)^2)^2"),
        |f| f.u.push_str(" + 2*step(x - 0.52)"),
        |f| {
            f.problem.jumps[0] = jump("0.05 + 0.01*x", "0", 0.5, "1");
            f.u = "0.1*(1 - exp(-3*(x + 2))) + pos(x)^2".into();
        },
        |f| f.problem.jumps[0].atoms[0].mark = vec![f64::INFINITY],
        |f| f.problem.jumps[0].gamma_bar = em("0.01", 1),
        |f| {
            let d = DensitySpec { density: em("1/xi1^3", 1), lower: vec![0.0], upper: vec![1.0], nodes: 8 };
            f.problem.jumps[0] = JumpComponent::with_density(em("0.05*xi1", 1), em("0", 1), d, em("xi1", 1)).expect("fixture density");
        },
        |f| f.problem.coefficients.beta2 = e("0.1 + 0.005*x"),
        |f| {
            f.problem.jumps[0] = jump("-2*(x + 0.55)", "0", 0.5, "4");
            f.problem.coefficients.alpha1 = e("y + 1.2*x");
        },
        |f| f.problem.jumps[0] = jump("0.05", "0.01*x", 0.5, "1"),
        |f| f.u.push_str(" - 10*pos(0.04 - (x - 1.5)^2)"),
        |f| f.u.push_str(" + 0.01*(x + 2)"),
        |f| {
            f.problem.jumps = vec![jump("0.05", "0.4", 0.1, "2"), jump("1.2", "0", 0.5, "2")];
            f.u.push_str(" + pos(0.5 - t)*pos(y - 0.8)*(-0.5)*min(max(x + 0.9, 0), 0.8)");
        },
    ];
    CATALOG
        .iter()
        .zip(edits)
        .map(|(&id, edit)| {
            let mut f = CatalogFixture::baseline();
            f.id = id;
            edit(&mut f);
            f
        })
        .collect()
}
