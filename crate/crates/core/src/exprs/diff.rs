//! Symbolic differentiation with constant folding.

use super::{BinaryOp, Expr, UnaryOp, Var};

fn bx(e: Expr) -> Box<Expr> {
    Box::new(e)
}

pub(super) fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Num(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Expr::Binary(BinaryOp::Add, bx(a), bx(b)),
    }
}

pub(super) fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Num(x - y),
        (Some(0.0), _) => neg(b),
        (_, Some(0.0)) => a,
        _ => Expr::Binary(BinaryOp::Sub, bx(a), bx(b)),
    }
}

pub(super) fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Num(x * y),
        (Some(0.0), _) | (_, Some(0.0)) => Expr::Num(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        _ => Expr::Binary(BinaryOp::Mul, bx(a), bx(b)),
    }
}

pub(super) fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if y != 0.0 => Expr::Num(x / y),
        (_, Some(1.0)) => a,
        _ => Expr::Binary(BinaryOp::Div, bx(a), bx(b)),
    }
}

pub(super) fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Unary(UnaryOp::Neg, inner) => *inner,
        other => Expr::Unary(UnaryOp::Neg, bx(other)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match b.as_const() {
        Some(1.0) => a,
        Some(0.0) => Expr::Num(1.0),
        _ => Expr::Binary(BinaryOp::Pow, bx(a), bx(b)),
    }
}

fn unary(op: UnaryOp, a: Expr) -> Expr {
    Expr::Unary(op, bx(a))
}

/// Kink-guarded zero: the derivative of `sign`/`step`, which is zero away
/// from the switch point but must still refuse evaluation at it.
fn guarded_zero(arg: &Expr) -> Expr {
    Expr::Select {
        lhs: bx(arg.clone()),
        rhs: bx(Expr::Num(0.0)),
        lt: bx(Expr::Num(0.0)),
        ge: bx(Expr::Num(0.0)),
    }
}

pub(super) fn derivative(e: &Expr, var: Var) -> Expr {
    if !e.depends_on(var) {
        return Expr::Num(0.0);
    }
    match e {
        Expr::Num(_) => Expr::Num(0.0),
        Expr::Var(v) => Expr::Num(if *v == var { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = derivative(a, var);
            let a = (**a).clone();
            match op {
                UnaryOp::Neg => neg(da),
                UnaryOp::Exp => mul(unary(UnaryOp::Exp, a), da),
                UnaryOp::Log => div(da, a),
                UnaryOp::Sqrt => div(da, mul(Expr::Num(2.0), unary(UnaryOp::Sqrt, a))),
                UnaryOp::Abs => mul(unary(UnaryOp::Sign, a), da),
                UnaryOp::Pos => mul(unary(UnaryOp::Step, a), da),
                UnaryOp::Sign | UnaryOp::Step => guarded_zero(&a),
            }
        }
        Expr::Binary(op, a, b) => {
            let da = derivative(a, var);
            let db = derivative(b, var);
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinaryOp::Add => add(da, db),
                BinaryOp::Sub => sub(da, db),
                BinaryOp::Mul => add(mul(da, b.clone()), mul(a, db)),
                BinaryOp::Div => {
                    // (a'b - ab') / b^2
                    let num = sub(mul(da, b.clone()), mul(a, db));
                    div(num, pow(b, Expr::Num(2.0)))
                }
                BinaryOp::Pow => {
                    if !b.depends_on(var) {
                        // b a^(b-1) a'
                        let exp = sub(b.clone(), Expr::Num(1.0));
                        mul(mul(b, pow(a, exp)), da)
                    } else if !a.depends_on(var) {
                        // a^b log(a) b'
                        mul(mul(pow(a.clone(), b), unary(UnaryOp::Log, a)), db)
                    } else {
                        // a^b (b' log a + b a'/a)
                        let inner = add(mul(db, unary(UnaryOp::Log, a.clone())), div(mul(b.clone(), da), a.clone()));
                        mul(pow(a, b), inner)
                    }
                }
                BinaryOp::Min => Expr::Select { lhs: bx(a), rhs: bx(b), lt: bx(da), ge: bx(db) },
                BinaryOp::Max => Expr::Select { lhs: bx(a), rhs: bx(b), lt: bx(db), ge: bx(da) },
            }
        }
        Expr::Select { lhs, rhs, lt, ge } => Expr::Select {
            lhs: lhs.clone(),
            rhs: rhs.clone(),
            lt: bx(derivative(lt, var)),
            ge: bx(derivative(ge, var)),
        },
    }
}

#[cfg(test)]
mod tests {
    use crate::exprs::{parse, EvalContext, EvalError, Var};

    fn d_at(src: &str, var: Var, x: f64, y: f64) -> Result<f64, EvalError> {
        parse(src).unwrap().differentiate(var).eval_txy(0.0, x, y)
    }

    #[test]
    fn spec_examples() {
        assert_eq!(d_at("x*x*y", Var::X, 2.0, 3.0).unwrap(), 12.0);
        let v = d_at("exp(x*y)", Var::X, 1.0, 2.0).unwrap();
        assert!((v - 2.0 * 2f64.exp()).abs() < 1e-12);
        let e = parse("x*x*x").unwrap();
        let d2 = e.differentiate(Var::X).differentiate(Var::X);
        assert_eq!(d2.eval_txy(0.0, 2.0, 0.0).unwrap(), 12.0);
    }

    #[test]
    fn constant_folding() {
        let e = parse("3*y + 2").unwrap();
        assert!(e.differentiate(Var::X).is_zero());
        assert_eq!(parse("x").unwrap().differentiate(Var::X).as_const(), Some(1.0));
        assert_eq!(parse("5*x").unwrap().differentiate(Var::X).as_const(), Some(5.0));
    }

    #[test]
    fn kink_sentinel_fires_only_at_kink() {
        let put = parse("max(100 - x, 0)").unwrap();
        let d = put.differentiate(Var::X);
        assert_eq!(d.eval_txy(0.0, 90.0, 0.0).unwrap(), -1.0);
        assert_eq!(d.eval_txy(0.0, 110.0, 0.0).unwrap(), 0.0);
        assert!(matches!(d.eval_txy(0.0, 100.0, 0.0), Err(EvalError::NonSmoothAtKink { .. })));
        // the second derivative keeps the sentinel as well
        let d2 = d.differentiate(Var::X);
        assert_eq!(d2.eval_txy(0.0, 90.0, 0.0).unwrap(), 0.0);
        assert!(matches!(d2.eval_txy(0.0, 100.0, 0.0), Err(EvalError::NonSmoothAtKink { .. })));

        let a = parse("abs(x - 1)").unwrap().differentiate(Var::X);
        assert_eq!(a.eval_txy(0.0, 0.0, 0.0).unwrap(), -1.0);
        assert!(a.eval_txy(0.0, 1.0, 0.0).is_err());
        let p = parse("pos(x - 1)^2").unwrap().differentiate(Var::X);
        assert_eq!(p.eval_txy(0.0, 2.0, 0.0).unwrap(), 2.0);
        assert_eq!(p.eval_txy(0.0, 0.0, 0.0).unwrap(), 0.0);
        // a looser kink tolerance widens the excluded band
        let ctx = EvalContext::txy(0.0, 1.0 + 1e-6, 0.0).with_kink_tol(1e-3);
        assert!(p.evaluate(&ctx).is_err());
    }

    #[test]
    fn power_rules() {
        let g = |s: &str, x: f64| d_at(s, Var::X, x, 0.5).unwrap();
        assert!((g("2^x", 1.5) - 2f64.powf(1.5) * 2f64.ln()).abs() < 1e-12);
        assert!((g("x^x", 1.5) - 1.5f64.powf(1.5) * (1.5f64.ln() + 1.0)).abs() < 1e-12);
        assert!((g("sqrt(x)", 4.0) - 0.25).abs() < 1e-15);
        assert!((g("log(x)", 4.0) - 0.25).abs() < 1e-15);
        assert!((g("1/x", 2.0) + 0.25).abs() < 1e-15);
    }
}
