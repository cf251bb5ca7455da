use thiserror::Error;

use super::{BinaryOp, Expr, UnaryOp, Var};

/// Largest supported jump-mark dimension.
pub const MAX_MARK_DIM: usize = 8;

/// Default relative tolerance of the kink sentinel.
pub const DEFAULT_KINK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in {op} at argument {arg}")]
    Domain { op: &'static str, arg: f64 },
    #[error("no binding for variable {0}")]
    MissingBinding(String),
    #[error("derivative evaluated at a kink of {op} (switch argument {arg:e})")]
    NonSmoothAtKink { op: &'static str, arg: f64 },
}

/// Variable bindings for evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext {
    slots: [f64; 3 + MAX_MARK_DIM],
    bound: u16,
    pub kink_tol: f64,
}

impl Default for EvalContext {
    fn default() -> Self {
        Self::new()
    }
}

impl EvalContext {
    pub fn new() -> Self {
        Self { slots: [0.0; 3 + MAX_MARK_DIM], bound: 0, kink_tol: DEFAULT_KINK_TOL }
    }

    pub fn txy(t: f64, x: f64, y: f64) -> Self {
        Self::new().with(Var::T, t).with(Var::X, x).with(Var::Y, y)
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }

    /// Binds `xi1..xiD` to `marks`.
    pub fn with_marks(mut self, marks: &[f64]) -> Self {
        assert!(marks.len() <= MAX_MARK_DIM, "mark dimension above {MAX_MARK_DIM}");
        for (k, &m) in marks.iter().enumerate() {
            self.set(Var::Xi(k as u8), m);
        }
        self
    }

    pub fn set(&mut self, var: Var, value: f64) {
        let s = var.slot();
        assert!(s < self.slots.len(), "variable {} beyond supported mark dimension", var.name());
        self.slots[s] = value;
        self.bound |= 1 << s;
    }

    /// Binds a variable by its surface name (`t`, `x`, `y`, `xi1`, ...).
    pub fn bind(&mut self, name: &str, value: f64) -> Result<(), EvalError> {
        let var = match name {
            "t" => Var::T,
            "x" => Var::X,
            "y" => Var::Y,
            _ => match name.strip_prefix("xi").and_then(|d| d.parse::<usize>().ok()) {
                Some(k) if (1..=MAX_MARK_DIM).contains(&k) => Var::Xi((k - 1) as u8),
                _ => return Err(EvalError::MissingBinding(name.to_string())),
            },
        };
        self.set(var, value);
        Ok(())
    }

    pub fn get(&self, var: Var) -> Option<f64> {
        let s = var.slot();
        if s < self.slots.len() && self.bound & (1 << s) != 0 {
            Some(self.slots[s])
        } else {
            None
        }
    }

    pub fn with_kink_tol(mut self, tol: f64) -> Self {
        self.kink_tol = tol;
        self
    }
}

fn finite(op: &'static str, arg: f64, v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::Domain { op, arg })
    }
}

pub(super) fn evaluate(e: &Expr, ctx: &EvalContext) -> Result<f64, EvalError> {
    match e {
        Expr::Num(v) => Ok(*v),
        Expr::Var(v) => ctx.get(*v).ok_or_else(|| EvalError::MissingBinding(v.name())),
        Expr::Unary(op, a) => {
            let a = evaluate(a, ctx)?;
            match op {
                UnaryOp::Neg => Ok(-a),
                UnaryOp::Exp => finite("exp", a, a.exp()),
                UnaryOp::Log => {
                    if a <= 0.0 {
                        Err(EvalError::Domain { op: "log", arg: a })
                    } else {
                        Ok(a.ln())
                    }
                }
                UnaryOp::Sqrt => {
                    if a < 0.0 {
                        Err(EvalError::Domain { op: "sqrt", arg: a })
                    } else {
                        Ok(a.sqrt())
                    }
                }
                UnaryOp::Abs => Ok(a.abs()),
                UnaryOp::Pos => Ok(a.max(0.0)),
                UnaryOp::Sign | UnaryOp::Step => {
                    if a.abs() <= ctx.kink_tol {
                        let op = if *op == UnaryOp::Sign { "abs" } else { "pos" };
                        return Err(EvalError::NonSmoothAtKink { op, arg: a });
                    }
                    Ok(match op {
                        UnaryOp::Sign => a.signum(),
                        _ => {
                            if a > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    })
                }
            }
        }
        Expr::Binary(op, a, b) => {
            let a = evaluate(a, ctx)?;
            let b = evaluate(b, ctx)?;
            match op {
                BinaryOp::Add => finite("+", a, a + b),
                BinaryOp::Sub => finite("-", a, a - b),
                BinaryOp::Mul => finite("*", a, a * b),
                BinaryOp::Div => {
                    if b == 0.0 {
                        Err(EvalError::Domain { op: "/", arg: b })
                    } else {
                        finite("/", b, a / b)
                    }
                }
                BinaryOp::Pow => {
                    if a < 0.0 && b.fract() != 0.0 {
                        return Err(EvalError::Domain { op: "^", arg: a });
                    }
                    if a == 0.0 && b < 0.0 {
                        return Err(EvalError::Domain { op: "^", arg: a });
                    }
                    finite("^", a, a.powf(b))
                }
                BinaryOp::Min => Ok(a.min(b)),
                BinaryOp::Max => Ok(a.max(b)),
            }
        }
        Expr::Select { lhs, rhs, lt, ge } => {
            let a = evaluate(lhs, ctx)?;
            let b = evaluate(rhs, ctx)?;
            let scale = 1.0f64.max(a.abs()).max(b.abs());
            if (a - b).abs() <= ctx.kink_tol * scale {
                return Err(EvalError::NonSmoothAtKink { op: "min/max", arg: a - b });
            }
            if a < b {
                evaluate(lt, ctx)
            } else {
                evaluate(ge, ctx)
            }
        }
    }
}
