//! Scalar expressions used to define the model ingredients.
//!
//! Grammar (right-associative `^`, unary minus binds looser than `^`):
//!
//! ```text
//! expr   := term (("+"|"-") term)*
//! term   := factor (("*"|"/") factor)*
//! factor := unary ("^" factor)?
//! unary  := "-" unary | atom
//! atom   := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! so `-2^2` is `-(2^2)` and `2^3^2` is `2^(3^2) = 512`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Min,
    Max,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Tanh => "tanh",
        }
    }

    /// `None` means variadic with at least one argument.
    fn arity(self) -> Option<usize> {
        match self {
            Func::Min | Func::Max => None,
            _ => Some(1),
        }
    }
}

/// Abstract syntax tree of a parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at position {pos}: expected {expected}, found {found}")]
    Syntax {
        pos: usize,
        expected: String,
        found: String,
    },
    #[error("unknown function `{name}` at position {pos}")]
    UnknownFunction { name: String, pos: usize },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("function `{name}` at position {pos} takes {expected} argument(s), got {got}")]
    Arity {
        name: String,
        pos: usize,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{0}` is not bound")]
    Unbound(&'static str),
    #[error("domain error in `{expr}`: argument {arg}")]
    Domain { expr: String, arg: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Op(c) => write!(f, "`{c}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent part, only if followed by digits
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
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                pos: start,
                expected: "a number".into(),
                found: format!("`{lit}`"),
            })?;
            out.push((Tok::Num(v), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), start));
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                return Err(ParseError::Syntax {
                    pos: start,
                    expected: "an operator, number, identifier or parenthesis".into(),
                    found: format!("`{c}`"),
                })
            }
        };
        out.push((tok, start));
        i += c.len_utf8();
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            pos: self.pos(),
            expected: expected.into(),
            found: self.peek().to_string(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // `^` binds tighter than unary minus, so `-2^2` is `-(2^2)`; a minus is
    // still accepted in an exponent (`2^-1`).
    fn factor(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.factor()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return self.fail("`)`");
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(name) => {
                let (_, pos) = self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(ParseError::UnknownFunction { name: name.clone(), pos })?;
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    if *self.peek() != Tok::RParen {
                        return self.fail("`,` or `)`");
                    }
                    self.bump();
                    if let Some(n) = func.arity() {
                        if args.len() != n {
                            return Err(ParseError::Arity {
                                name,
                                pos,
                                expected: n,
                                got: args.len(),
                            });
                        }
                    }
                    return Ok(Expr::Call(func, args));
                }
                match name.as_str() {
                    "x" => Ok(Expr::Var(Var::X)),
                    "y" => Ok(Expr::Var(Var::Y)),
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ if Func::from_name(&name).is_some() => Err(ParseError::Syntax {
                        pos: self.pos(),
                        expected: "`(` after function name".into(),
                        found: self.peek().to_string(),
                    }),
                    _ => Err(ParseError::UnknownIdentifier { name, pos }),
                }
            }
            _ => self.fail("a number, identifier, `-` or `(`"),
        }
    }
}

/// Parse expression text into an AST.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.fail("an operator or end of input");
    }
    Ok(e)
}

impl Expr {
    /// Evaluate with `x` bound and `y` optionally bound.
    pub fn eval(&self, x: f64, y: Option<f64>) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y.ok_or(EvalError::Unbound("y"))?,
            Expr::Neg(a) => -a.eval(x, y)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, y)?, b.eval(x, y)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(x, y)?;
                let domain = |arg: f64| EvalError::Domain {
                    expr: self.to_string(),
                    arg,
                };
                match f {
                    Func::Exp => a.exp(),
                    Func::Log if a <= 0.0 => return Err(domain(a)),
                    Func::Log => a.ln(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Sqrt if a < 0.0 => return Err(domain(a)),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Tanh => a.tanh(),
                    Func::Min | Func::Max => {
                        let mut acc = a;
                        for arg in &args[1..] {
                            let v = arg.eval(x, y)?;
                            acc = if *f == Func::Min { acc.min(v) } else { acc.max(v) };
                        }
                        acc
                    }
                }
            }
        })
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(a) => a.uses(var),
            Expr::Bin(_, a, b) => a.uses(var) || b.uses(var),
            Expr::Call(_, args) => args.iter().any(|a| a.uses(var)),
        }
    }
}

/// Free-function form of [`Expr::eval`].
pub fn evaluate(e: &Expr, x: f64, y: Option<f64>) -> Result<f64, EvalError> {
    e.eval(x, y)
}

// Fully parenthesized so the printed text re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: &str, x: f64, y: Option<f64>) -> f64 {
        parse(t).unwrap().eval(x, y).unwrap()
    }

    #[test]
    fn literal_and_call_shapes() {
        assert_eq!(parse("0").unwrap(), Expr::Num(0.0));
        assert_eq!(
            parse("exp(-x)").unwrap(),
            Expr::Call(Func::Exp, vec![Expr::Neg(Box::new(Expr::Var(Var::X)))])
        );
        let e = parse("1/(1+x^2)").unwrap();
        let expected = Expr::Bin(
            BinOp::Div,
            Box::new(Expr::Num(1.0)),
            Box::new(Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Num(1.0)),
                Box::new(Expr::Bin(
                    BinOp::Pow,
                    Box::new(Expr::Var(Var::X)),
                    Box::new(Expr::Num(2.0)),
                )),
            )),
        );
        assert_eq!(e, expected);
        assert_eq!(e.eval(1.0, None).unwrap(), 0.5);
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(ev("x+y", 2.0, Some(3.0)), 5.0);
        assert_eq!(ev("exp(0)", 17.0, None), 1.0);
        assert_eq!(ev("min(1, x)", 0.25, None), 0.25);
        assert_eq!(ev("max(1, x, 3)", 0.25, None), 3.0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("2^3^2", 0.0, None), 512.0);
        assert_eq!(ev("-2^2", 0.0, None), -4.0);
        assert_eq!(ev("1-2-3", 0.0, None), -4.0);
        assert_eq!(ev("8/4/2", 0.0, None), 1.0);
        assert_eq!(ev("2*3+4*5", 0.0, None), 26.0);
        assert_eq!(ev("-x*2", 3.0, None), -6.0);
        assert_eq!(ev("2^-1", 0.0, None), 0.5);
        assert_eq!(ev("(-2)^2", 0.0, None), 4.0);
        assert!((ev("pi", 0.0, None) - std::f64::consts::PI).abs() < 1e-15);
        assert!((ev("e", 0.0, None) - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(ev("1.5e-1 * 2", 0.0, None), 0.3);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse("  "), Err(ParseError::Empty));
        assert!(matches!(parse("1 +"), Err(ParseError::Syntax { pos: 3, .. })));
        assert!(matches!(parse("(1"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("1 2"), Err(ParseError::Syntax { pos: 2, .. })));
        assert!(matches!(
            parse("foo(x)"),
            Err(ParseError::UnknownFunction { pos: 0, .. })
        ));
        assert!(matches!(
            parse("2*z"),
            Err(ParseError::UnknownIdentifier { pos: 2, .. })
        ));
        assert!(matches!(parse("exp(1,2)"), Err(ParseError::Arity { .. })));
        assert!(matches!(parse("1 $ 2"), Err(ParseError::Syntax { pos: 2, .. })));
    }

    #[test]
    fn eval_errors() {
        let e = parse("x + y").unwrap();
        assert_eq!(e.eval(1.0, None), Err(EvalError::Unbound("y")));
        let e = parse("1 + log(x - 1)").unwrap();
        match e.eval(0.5, None) {
            Err(EvalError::Domain { expr, arg }) => {
                assert_eq!(expr, "log((x - 1.0))");
                assert_eq!(arg, -0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("sqrt(x)").unwrap().eval(-1.0, None).is_err());
    }

    #[test]
    fn free_variables() {
        let e = parse("x*y + 1").unwrap();
        assert!(e.uses(Var::X) && e.uses(Var::Y));
        assert!(!parse("exp(-x)").unwrap().uses(Var::Y));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-5.0f64..5.0).prop_map(Expr::Num),
            Just(Expr::Var(Var::X)),
            Just(Expr::Var(Var::Y)),
        ];
        leaf.prop_recursive(5, 40, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Expr::Call(Func::Tanh, vec![a])),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Call(Func::Min, vec![a, b])),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_roundtrip(e in arb_expr(), pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 100)) {
            let back = parse(&e.to_string()).unwrap();
            for (x, y) in pts {
                let a = e.eval(x, Some(y)).unwrap();
                let b = back.eval(x, Some(y)).unwrap();
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }
}
