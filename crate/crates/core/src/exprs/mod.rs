//! Expression language for coefficients, gains and jump maps.
//!
//! Expressions are small ASTs over the variables `t`, `x`, `y` and the jump
//! marks `xi1..xiD`. They can be evaluated pointwise and differentiated
//! symbolically, so that quantities such as `(d/dt + L - r) g` are formed
//! exactly instead of by numerical differencing.
//!
//! The grammar (see `docs/expressions.md`):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | variable | constant | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```

mod diff;
mod eval;
mod parse;
mod print;

use std::collections::BTreeSet;

pub use eval::{EvalContext, EvalError, DEFAULT_KINK_TOL, MAX_MARK_DIM};
pub use parse::{parse, parse_with, ParseError, Symbols};

/// A variable of the expression language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    T,
    X,
    Y,
    /// Jump mark coordinate, zero-based (`xi1` is `Xi(0)`).
    Xi(u8),
}

impl Var {
    pub fn name(&self) -> String {
        match self {
            Var::T => "t".to_string(),
            Var::X => "x".to_string(),
            Var::Y => "y".to_string(),
            Var::Xi(k) => format!("xi{}", k + 1),
        }
    }

    pub(crate) fn slot(&self) -> usize {
        match self {
            Var::T => 0,
            Var::X => 1,
            Var::Y => 2,
            Var::Xi(k) => 3 + *k as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    Abs,
    /// `pos(e) = max(e, 0)`.
    Pos,
    /// Sign of the argument; arises as the derivative of `abs`.
    Sign,
    /// Heaviside step; arises as the derivative of `pos`.
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

/// Abstract syntax tree of an expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// `select(a, b, lt, ge)`: `lt` when `a < b`, otherwise `ge`.
    ///
    /// Produced by differentiating `min`/`max`; evaluation fails with
    /// [`EvalError::NonSmoothAtKink`] when `a` and `b` are within the kink
    /// tolerance of each other.
    Select {
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        lt: Box<Expr>,
        ge: Box<Expr>,
    },
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// Whether `var` appears anywhere in the tree.
    pub fn depends_on(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Unary(_, a) => a.depends_on(var),
            Expr::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
            Expr::Select { lhs, rhs, lt, ge } => {
                lhs.depends_on(var) || rhs.depends_on(var) || lt.depends_on(var) || ge.depends_on(var)
            }
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(*v);
            }
            Expr::Unary(_, a) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Select { lhs, rhs, lt, ge } => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
                lt.collect_vars(out);
                ge.collect_vars(out);
            }
        }
    }

    /// Whether a `min`, `max`, `abs`, `pos` (or derived kink node) lies on a
    /// path that depends on `var`.
    pub fn has_kink_in(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Unary(op, a) => {
                let kinky = matches!(op, UnaryOp::Abs | UnaryOp::Pos | UnaryOp::Sign | UnaryOp::Step);
                (kinky && a.depends_on(var)) || a.has_kink_in(var)
            }
            Expr::Binary(op, a, b) => {
                let kinky = matches!(op, BinaryOp::Min | BinaryOp::Max);
                (kinky && (a.depends_on(var) || b.depends_on(var))) || a.has_kink_in(var) || b.has_kink_in(var)
            }
            Expr::Select { .. } => self.depends_on(var),
        }
    }

    /// Replaces every occurrence of `var` with `with`.
    pub fn substitute(&self, var: Var, with: &Expr) -> Expr {
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Var(v) if *v == var => with.clone(),
            Expr::Var(_) => self.clone(),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.substitute(var, with))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.substitute(var, with)),
                Box::new(b.substitute(var, with)),
            ),
            Expr::Select { lhs, rhs, lt, ge } => Expr::Select {
                lhs: Box::new(lhs.substitute(var, with)),
                rhs: Box::new(rhs.substitute(var, with)),
                lt: Box::new(lt.substitute(var, with)),
                ge: Box::new(ge.substitute(var, with)),
            },
        }
    }

    /// Symbolic partial derivative with respect to `var`.
    pub fn differentiate(&self, var: Var) -> Expr {
        diff::derivative(self, var)
    }

    /// Evaluates the expression; see [`EvalContext`].
    pub fn evaluate(&self, ctx: &EvalContext) -> Result<f64, EvalError> {
        eval::evaluate(self, ctx)
    }

    /// Convenience evaluation at `(t, x, y)` without marks.
    pub fn eval_txy(&self, t: f64, x: f64, y: f64) -> Result<f64, EvalError> {
        eval::evaluate(self, &EvalContext::txy(t, x, y))
    }

    /// Depth of the tree (a leaf has depth 1).
    pub fn depth(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
            Expr::Select { lhs, rhs, lt, ge } => {
                1 + lhs.depth().max(rhs.depth()).max(lt.depth()).max(ge.depth())
            }
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_vars_and_dependence() {
        let e = parse_with("x*xi1 + t", &Symbols::with_marks(1)).unwrap();
        let vars: Vec<_> = e.free_vars().into_iter().collect();
        assert_eq!(vars, vec![Var::T, Var::X, Var::Xi(0)]);
        assert!(!e.depends_on(Var::Y));
    }

    #[test]
    fn kink_detection_is_per_variable() {
        let e = parse("max(100 - x, 0) * y").unwrap();
        assert!(e.has_kink_in(Var::X));
        assert!(!e.has_kink_in(Var::Y));
    }

    #[test]
    fn substitution_reflects_x() {
        let e = parse("x*x + 2*x").unwrap();
        let r = e.substitute(Var::X, &Expr::Unary(UnaryOp::Neg, Box::new(Expr::Var(Var::X))));
        assert_eq!(r.eval_txy(0.0, 3.0, 0.0).unwrap(), 9.0 - 6.0);
    }
}
