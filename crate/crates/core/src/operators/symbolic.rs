use crate::exprs::{EvalContext, EvalError, Expr, Var};
use crate::model::ProblemSpec;

/// `(d/dt + L + A - r) e` for an expression `e`, with all derivatives formed
/// symbolically and the jump integral taken over the atoms exactly (no grid
/// interpolation).
#[derive(Debug, Clone)]
pub struct ExprGenerator {
    pub e: Expr,
    pub et: Expr,
    pub ex: Expr,
    pub ey: Expr,
    pub exx: Expr,
    pub eyy: Expr,
    pub exy: Expr,
}

impl ExprGenerator {
    pub fn new(e: &Expr) -> ExprGenerator {
        let ex = e.differentiate(Var::X);
        let ey = e.differentiate(Var::Y);
        ExprGenerator {
            e: e.clone(),
            et: e.differentiate(Var::T),
            exx: ex.differentiate(Var::X),
            eyy: ey.differentiate(Var::Y),
            exy: ex.differentiate(Var::Y),
            ex,
            ey,
        }
    }

    /// Evaluates the generator at `(t, x, y)`. Coefficients multiplying a
    /// derivative that is identically zero are never evaluated.
    pub fn apply(&self, p: &ProblemSpec, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        let ctx = EvalContext::txy(t, x, y);
        let c = &p.coefficients;
        let term = |coef: &Expr, d: &Expr| -> Result<f64, EvalError> {
            if d.is_zero() {
                Ok(0.0)
            } else {
                Ok(coef.evaluate(&ctx)? * d.evaluate(&ctx)?)
            }
        };
        let mut acc = if self.et.is_zero() { 0.0 } else { self.et.evaluate(&ctx)? };
        acc += term(&c.alpha1, &self.ex)?;
        acc += term(&c.alpha2, &self.ey)?;
        acc += term(&c.beta1, &self.exx)?;
        acc += term(&c.beta2, &self.eyy)?;
        if c.rho != 0.0 && !self.exy.is_zero() {
            let bb = c.beta_bar(c.beta1.evaluate(&ctx)?, c.beta2.evaluate(&ctx)?);
            acc += 2.0 * bb * self.exy.evaluate(&ctx)?;
        }
        let value = if self.e.is_zero() { 0.0 } else { self.e.evaluate(&ctx)? };
        if value != 0.0 {
            acc -= c.r.evaluate(&ctx)? * value;
        }
        for jc in &p.jumps {
            for atom in &jc.atoms {
                let (g1, g2) = jc.gamma_at(t, x, y, atom)?;
                let after = self.e.evaluate(&EvalContext::txy(t, x + g1, y + g2))?;
                acc += atom.weight * (after - value);
                if jc.compensate_small_jumps && jc.gamma_bar_at(atom)? < 1.0 {
                    let gx = if self.ex.is_zero() { 0.0 } else { self.ex.evaluate(&ctx)? };
                    let gy = if self.ey.is_zero() { 0.0 } else { self.ey.evaluate(&ctx)? };
                    acc -= atom.weight * (g1 * gx + g2 * gy);
                }
            }
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::parse;
    use crate::model::{Atom, CoefficientSet, DomainBox, GainSpec, JumpComponent};

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn linear_gain_with_jump() {
        let mut c = CoefficientSet::zero();
        c.alpha1 = p("y + 0.15*x");
        c.alpha2 = p("0.2*(1 - y)");
        c.beta1 = p("0.05");
        c.beta2 = p("0.1");
        c.r = p("0.05");
        let mut spec = ProblemSpec::new(c, GainSpec::new(p("x")), DomainBox { x_lo: -1.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 }, 1.0);
        spec.jumps.push(JumpComponent::with_atoms(p("0.05"), p("0"), 1, vec![Atom { mark: vec![0.0], weight: 0.5 }], p("0.05")));
        let h = ExprGenerator::new(&p("x"));
        for (x, y) in [(0.3, 0.2), (-0.7, 0.9)] {
            let want = y + 0.1 * x + 0.025;
            assert!((h.apply(&spec, 0.1, x, y).unwrap() - want).abs() < 1e-14);
        }
    }

    #[test]
    fn kinks_propagate_only_where_needed() {
        let mut c = CoefficientSet::zero();
        c.alpha1 = p("0.05*x");
        c.beta1 = p("0.02*x*x");
        c.r = p("0.05");
        let spec = ProblemSpec::new(c, GainSpec::new(p("max(100 - x, 0)")), DomainBox { x_lo: 0.0, x_hi: 200.0, y_lo: 0.0, y_hi: 1.0 }, 1.0);
        let h = ExprGenerator::new(&spec.gain.g);
        assert!((h.apply(&spec, 0.0, 80.0, 0.5).unwrap() + 5.0).abs() < 1e-12);
        assert!(matches!(h.apply(&spec, 0.0, 100.0, 0.5), Err(EvalError::NonSmoothAtKink { .. })));
    }
}
