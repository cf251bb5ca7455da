use std::fmt;

use super::{BinaryOp, Expr, UnaryOp};

const ADD: u8 = 1;
const MUL: u8 = 2;
const NEG: u8 = 3;
const POW: u8 = 4;
const ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => ATOM,
        Expr::Num(_) | Expr::Var(_) | Expr::Select { .. } => ATOM,
        Expr::Unary(UnaryOp::Neg, _) => NEG,
        Expr::Unary(..) => ATOM,
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => ADD,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => MUL,
        Expr::Binary(BinaryOp::Pow, ..) => POW,
        Expr::Binary(BinaryOp::Min | BinaryOp::Max, ..) => ATOM,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
        write!(f, "({v:?})")
    } else {
        write!(f, "{v:?}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write_num(f, *v),
            Expr::Var(v) => write!(f, "{}", v.name()),
            Expr::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                if let Expr::Num(v) = a.as_ref() {
                    // `-2` would read back as the literal -2
                    write!(f, "(")?;
                    write_num(f, *v)?;
                    write!(f, ")")
                } else {
                    write_child(f, a, NEG)
                }
            }
            Expr::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Exp => "exp",
                    UnaryOp::Log => "log",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Abs => "abs",
                    UnaryOp::Pos => "pos",
                    UnaryOp::Sign => "sign",
                    UnaryOp::Step => "step",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({a})")
            }
            Expr::Binary(op @ (BinaryOp::Min | BinaryOp::Max), a, b) => {
                let name = if *op == BinaryOp::Min { "min" } else { "max" };
                write!(f, "{name}({a}, {b})")
            }
            Expr::Binary(BinaryOp::Pow, a, b) => {
                write_child(f, a, ATOM)?;
                f.write_str("^")?;
                write_child(f, b, NEG)
            }
            Expr::Binary(op, a, b) => {
                let (prec, sym) = match op {
                    BinaryOp::Add => (ADD, " + "),
                    BinaryOp::Sub => (ADD, " - "),
                    BinaryOp::Mul => (MUL, "*"),
                    BinaryOp::Div => (MUL, "/"),
                    _ => unreachable!(),
                };
                write_child(f, a, prec)?;
                f.write_str(sym)?;
                write_child(f, b, prec + 1)
            }
            Expr::Select { lhs, rhs, lt, ge } => write!(f, "select({lhs}, {rhs}, {lt}, {ge})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::exprs::parse;

    #[test]
    fn prints_minimal_parentheses() {
        let cases = [
            ("x*x + 2*y", "x*x + 2.0*y"),
            ("(x + y)*2", "(x + y)*2.0"),
            ("x - (y - 1)", "x - (y - 1.0)"),
            ("-x^2", "-x^2.0"),
            ("(-x)^2", "(-x)^2.0"),
            ("x^y^2", "x^y^2.0"),
            ("(x^y)^2", "(x^y)^2.0"),
            ("max(100 - x, 0)", "max(100.0 - x, 0.0)"),
            ("x - -3", "x - (-3.0)"),
        ];
        for (src, want) in cases {
            let e = parse(src).unwrap();
            assert_eq!(e.to_string(), want, "printing {src}");
            assert_eq!(parse(&e.to_string()).unwrap(), e, "round trip {src}");
        }
    }

    #[test]
    fn negated_literal_round_trips() {
        use crate::exprs::{Expr, UnaryOp};
        let e = Expr::Unary(UnaryOp::Neg, Box::new(Expr::Num(2.0)));
        assert_eq!(e.to_string(), "-(2.0)");
        assert_eq!(parse(&e.to_string()).unwrap(), e);
    }
}
