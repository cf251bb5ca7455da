use std::collections::BTreeMap;

use thiserror::Error;

use super::{BinaryOp, Expr, UnaryOp, Var, MAX_MARK_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected one of {}", expected.join(", "))]
    Syntax { offset: usize, expected: Vec<String> },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => *offset,
        }
    }
}

/// Names visible to the parser: the mark dimension and named constants.
#[derive(Debug, Clone, Default)]
pub struct Symbols {
    pub mark_dim: usize,
    pub constants: BTreeMap<String, f64>,
}

impl Symbols {
    pub fn with_marks(mark_dim: usize) -> Self {
        Self { mark_dim, constants: BTreeMap::new() }
    }

    pub fn constant(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }
}

/// Parses an expression in `t`, `x`, `y` (no marks, no constants).
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    parse_with(src, &Symbols::default())
}

pub fn parse_with(src: &str, symbols: &Symbols) -> Result<Expr, ParseError> {
    assert!(symbols.mark_dim <= MAX_MARK_DIM, "mark dimension above {MAX_MARK_DIM}");
    let tokens = lex(src)?;
    let mut p = Parser { tokens, pos: 0, symbols, end: src.len() };
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some(tok) => Err(ParseError::Syntax {
            offset: tok.offset,
            expected: vec!["operator".into(), "end of input".into()],
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                expected: vec!["number".into()],
            })?;
            out.push(Token { tok: Tok::Num(v), offset: start });
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(src[start..i].to_string()), offset: start });
        } else if b"+-*/^(),".contains(&c) {
            out.push(Token { tok: Tok::Sym(c as char), offset: start });
            i += 1;
        } else {
            return Err(ParseError::Syntax { offset: start, expected: operand_expected() });
        }
    }
    Ok(out)
}

fn operand_expected() -> Vec<String> {
    ["number", "identifier", "'('", "'-'"].iter().map(|s| s.to_string()).collect()
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    symbols: &'a Symbols,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_sym(&self) -> Option<char> {
        match self.peek() {
            Some(Token { tok: Tok::Sym(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek_sym() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::Syntax { offset: self.offset(), expected: vec![format!("'{c}'")] })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_sym() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinaryOp::Add } else { BinaryOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_sym() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinaryOp::Mul } else { BinaryOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek_sym() == Some('-') {
            self.pos += 1;
            // A minus sign directly in front of a number literal is part of the literal.
            if let Some(Token { tok: Tok::Num(v), .. }) = self.peek() {
                let v = *v;
                let next_is_pow = matches!(
                    self.tokens.get(self.pos + 1),
                    Some(Token { tok: Tok::Sym('^'), .. })
                );
                if !next_is_pow {
                    self.pos += 1;
                    return Ok(Expr::Num(-v));
                }
            }
            let inner = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek_sym() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ParseError::Syntax { offset: self.end, expected: operand_expected() });
        };
        match tok.tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::Sym('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if self.peek_sym() == Some('(') {
                    self.pos += 1;
                    return self.call(&name, tok.offset);
                }
                self.identifier(&name, tok.offset)
            }
            Tok::Sym(_) => Err(ParseError::Syntax { offset: tok.offset, expected: operand_expected() }),
        }
    }

    fn identifier(&self, name: &str, offset: usize) -> Result<Expr, ParseError> {
        match name {
            "t" => return Ok(Expr::Var(Var::T)),
            "x" => return Ok(Expr::Var(Var::X)),
            "y" => return Ok(Expr::Var(Var::Y)),
            _ => {}
        }
        if let Some(k) = name.strip_prefix("xi").and_then(|d| d.parse::<usize>().ok()) {
            if k >= 1 && k <= self.symbols.mark_dim {
                return Ok(Expr::Var(Var::Xi((k - 1) as u8)));
            }
        }
        if let Some(v) = self.symbols.constants.get(name) {
            return Ok(Expr::Num(*v));
        }
        Err(ParseError::UnknownIdentifier { name: name.to_string(), offset })
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Expr, ParseError> {
        let arity = match name {
            "exp" | "log" | "sqrt" | "abs" | "pos" | "sign" | "step" => 1,
            "min" | "max" | "pow" => 2,
            "select" => 4,
            _ => return Err(ParseError::UnknownIdentifier { name: name.to_string(), offset }),
        };
        let mut args = Vec::with_capacity(arity);
        for k in 0..arity {
            if k > 0 {
                self.expect(',')?;
            }
            args.push(self.expr()?);
        }
        self.expect(')')?;
        let mut args = args.into_iter().map(Box::new);
        let mut take = move || args.next().expect("arity checked");
        Ok(match name {
            "exp" => Expr::Unary(UnaryOp::Exp, take()),
            "log" => Expr::Unary(UnaryOp::Log, take()),
            "sqrt" => Expr::Unary(UnaryOp::Sqrt, take()),
            "abs" => Expr::Unary(UnaryOp::Abs, take()),
            "pos" => Expr::Unary(UnaryOp::Pos, take()),
            "sign" => Expr::Unary(UnaryOp::Sign, take()),
            "step" => Expr::Unary(UnaryOp::Step, take()),
            "min" => Expr::Binary(BinaryOp::Min, take(), take()),
            "max" => Expr::Binary(BinaryOp::Max, take(), take()),
            "pow" => Expr::Binary(BinaryOp::Pow, take(), take()),
            _ => Expr::Select { lhs: take(), rhs: take(), lt: take(), ge: take() },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(op: BinaryOp, a: Expr, c: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(c))
    }
    fn x() -> Expr {
        Expr::Var(Var::X)
    }
    fn y() -> Expr {
        Expr::Var(Var::Y)
    }
    fn n(v: f64) -> Expr {
        Expr::Num(v)
    }

    #[test]
    fn precedence_and_grouping() {
        assert_eq!(
            parse("x*x + 2*y").unwrap(),
            b(BinaryOp::Add, b(BinaryOp::Mul, x(), x()), b(BinaryOp::Mul, n(2.0), y()))
        );
        assert_eq!(parse("max(100 - x, 0)").unwrap(), b(BinaryOp::Max, b(BinaryOp::Sub, n(100.0), x()), n(0.0)));
        assert_eq!(parse("(x + y) * 2").unwrap(), b(BinaryOp::Mul, b(BinaryOp::Add, x(), y()), n(2.0)));
    }

    #[test]
    fn associativity() {
        // left for - and /
        assert_eq!(parse("x - y - 1").unwrap(), b(BinaryOp::Sub, b(BinaryOp::Sub, x(), y()), n(1.0)));
        assert_eq!(parse("x / y / 2").unwrap(), b(BinaryOp::Div, b(BinaryOp::Div, x(), y()), n(2.0)));
        // right for ^
        assert_eq!(parse("x ^ y ^ 2").unwrap(), b(BinaryOp::Pow, x(), b(BinaryOp::Pow, y(), n(2.0))));
    }

    #[test]
    fn pow_binds_tighter_than_negation() {
        let e = parse("-x^2").unwrap();
        assert_eq!(e, Expr::Unary(UnaryOp::Neg, Box::new(b(BinaryOp::Pow, x(), n(2.0)))));
        assert_eq!(e.eval_txy(0.0, 3.0, 0.0).unwrap(), -9.0);
        assert_eq!(parse("-2^2").unwrap().eval_txy(0.0, 0.0, 0.0).unwrap(), -4.0);
        assert_eq!(parse("2^-1").unwrap().eval_txy(0.0, 0.0, 0.0).unwrap(), 0.5);
        assert_eq!(parse("-3").unwrap(), n(-3.0));
    }

    #[test]
    fn syntax_error_offset() {
        let err = parse("x + * y").unwrap_err();
        assert_eq!(err.offset(), 4);
        assert!(matches!(err, ParseError::Syntax { .. }));
        assert!(matches!(parse("(x + 1").unwrap_err(), ParseError::Syntax { offset: 6, .. }));
        assert!(matches!(parse("x y").unwrap_err(), ParseError::Syntax { offset: 2, .. }));
        assert!(matches!(parse("").unwrap_err(), ParseError::Syntax { offset: 0, .. }));
    }

    #[test]
    fn unknown_identifiers() {
        assert_eq!(
            parse("x + z").unwrap_err(),
            ParseError::UnknownIdentifier { name: "z".into(), offset: 4 }
        );
        // marks are only declared up to the mark dimension
        assert!(parse("xi1").is_err());
        assert!(parse_with("xi1 + xi2", &Symbols::with_marks(2)).is_ok());
        assert!(parse_with("xi3", &Symbols::with_marks(2)).is_err());
        assert!(matches!(parse("foo(x)").unwrap_err(), ParseError::UnknownIdentifier { .. }));
    }

    #[test]
    fn constants_are_inlined() {
        let s = Symbols::default().constant("K", 100.0);
        assert_eq!(parse_with("K - x", &s).unwrap(), b(BinaryOp::Sub, n(100.0), x()));
    }

    #[test]
    fn numbers() {
        assert_eq!(parse("1e-3").unwrap(), n(1e-3));
        assert_eq!(parse(".5").unwrap(), n(0.5));
        assert_eq!(parse("2.5E+2").unwrap(), n(250.0));
    }
}
