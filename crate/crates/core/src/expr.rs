//! Formula parsing and exact forward-mode differentiation of one-variable
//! expressions.
//!
//! The grammar is deliberately small:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' exponent)?
//! primary := number | 'pi' | <variable> | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | sqrt | abs | arcsin | arccos
//! ```
//!
//! Exponents must fold to an integer constant. Evaluation carries value and
//! derivatives together ([`Jet2`]), so first and second derivatives are exact
//! up to rounding.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Absolute tolerance for the standing assumption `g(0) = 0`.
pub const G_ZERO_TOL: f64 = 1e-12;

/// Below this radius `g(r)/r` is evaluated from its Taylor expansion at 0.
const QUOTIENT_SWITCH: f64 = 5e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at byte {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("{function} evaluated outside its domain at x = {x}")]
    Domain { x: f64, function: &'static str },
    #[error("g(0) = {value:e} but the radial function must vanish at 0")]
    InvalidG { value: f64 },
}

pub type Result<T, E = ExprError> = std::result::Result<T, E>;

/// Value with exact first and second derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Third-order jet. Used internally for the `g(r)/r` limit at `r = 0`,
/// which needs one derivative more than it returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet3 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl From<Jet3> for Jet2 {
    fn from(j: Jet3) -> Self {
        Jet2 {
            value: j.value,
            d1: j.d1,
            d2: j.d2,
        }
    }
}

/// Product that treats an exact zero factor as annihilating, so that an
/// infinite outer derivative times a vanishing inner derivative stays 0.
fn times(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl Jet3 {
    pub fn constant(value: f64) -> Self {
        Jet3 {
            value,
            d1: 0.0,
            d2: 0.0,
            d3: 0.0,
        }
    }

    pub fn variable(x: f64) -> Self {
        Jet3 {
            value: x,
            d1: 1.0,
            d2: 0.0,
            d3: 0.0,
        }
    }

    /// Compose an outer function, given its derivatives `phi[k]` at `self.value`.
    fn chain(self, phi: [f64; 4]) -> Self {
        let (u1, u2, u3) = (self.d1, self.d2, self.d3);
        Jet3 {
            value: phi[0],
            d1: times(phi[1], u1),
            d2: times(phi[2], u1 * u1) + times(phi[1], u2),
            d3: times(phi[3], u1 * u1 * u1) + 3.0 * times(phi[2], u1 * u2) + times(phi[1], u3),
        }
    }

    fn recip(self) -> Self {
        let u = self.value;
        let r = 1.0 / u;
        self.chain([r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r])
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Jet3::constant(1.0);
        }
        let u = self.value;
        let nf = n as f64;
        let coef = [1.0, nf, nf * (nf - 1.0), nf * (nf - 1.0) * (nf - 2.0)];
        let mut phi = [0.0; 4];
        for (k, c) in coef.iter().enumerate() {
            phi[k] = if *c == 0.0 { 0.0 } else { c * u.powi(n - k as i32) };
        }
        self.chain(phi)
    }
}

impl Add for Jet3 {
    type Output = Jet3;
    fn add(self, o: Jet3) -> Jet3 {
        Jet3 {
            value: self.value + o.value,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
            d3: self.d3 + o.d3,
        }
    }
}

impl Sub for Jet3 {
    type Output = Jet3;
    fn sub(self, o: Jet3) -> Jet3 {
        self + (-o)
    }
}

impl Neg for Jet3 {
    type Output = Jet3;
    fn neg(self) -> Jet3 {
        Jet3 {
            value: -self.value,
            d1: -self.d1,
            d2: -self.d2,
            d3: -self.d3,
        }
    }
}

impl Mul for Jet3 {
    type Output = Jet3;
    fn mul(self, o: Jet3) -> Jet3 {
        let (a, b) = (self, o);
        Jet3 {
            value: a.value * b.value,
            d1: a.d1 * b.value + a.value * b.d1,
            d2: a.d2 * b.value + 2.0 * a.d1 * b.d1 + a.value * b.d2,
            d3: a.d3 * b.value + 3.0 * a.d2 * b.d1 + 3.0 * a.d1 * b.d2 + a.value * b.d3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Arcsin,
    Arccos,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "arcsin" => Func::Arcsin,
            "arccos" => Func::Arccos,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Arcsin => "arcsin",
            Func::Arccos => "arccos",
        }
    }

    /// Derivatives 0..=3 of the function at `u`, or `None` outside the domain.
    fn derivatives(self, u: f64) -> Option<[f64; 4]> {
        Some(match self {
            Func::Sin => {
                let (s, c) = u.sin_cos();
                [s, c, -s, -c]
            }
            Func::Cos => {
                let (s, c) = u.sin_cos();
                [c, -s, -c, s]
            }
            Func::Exp => {
                let e = u.exp();
                [e, e, e, e]
            }
            Func::Sqrt => {
                if u < 0.0 {
                    return None;
                }
                let s = u.sqrt();
                [s, 0.5 / s, -0.25 / (s * s * s), 0.375 / (s * s * s * s * s)]
            }
            Func::Abs => {
                let sign = if u > 0.0 {
                    1.0
                } else if u < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                [u.abs(), sign, 0.0, 0.0]
            }
            Func::Arcsin | Func::Arccos => {
                if !(-1.0..=1.0).contains(&u) {
                    return None;
                }
                let w = 1.0 - u * u;
                let d1 = 1.0 / w.sqrt();
                let d2 = u / (w * w.sqrt());
                let d3 = (1.0 + 2.0 * u * u) / (w * w * w.sqrt());
                if self == Func::Arcsin {
                    [u.asin(), d1, d2, d3]
                } else {
                    [u.acos(), -d1, -d2, -d3]
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

/// Expression tree of a parsed formula.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    fn jet(&self, x: f64, at: f64) -> Result<Jet3> {
        Ok(match self {
            Expr::Num(c) => Jet3::constant(*c),
            Expr::Pi => Jet3::constant(std::f64::consts::PI),
            Expr::Var => Jet3::variable(at),
            Expr::Neg(e) => -e.jet(x, at)?,
            Expr::Bin(op, a, b) => {
                let a = a.jet(x, at)?;
                let b = b.jet(x, at)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.value == 0.0 {
                            return Err(ExprError::Domain {
                                x,
                                function: "division",
                            });
                        }
                        a * b.recip()
                    }
                }
            }
            Expr::Pow(base, n) => {
                let b = base.jet(x, at)?;
                if *n < 0 && b.value == 0.0 {
                    return Err(ExprError::Domain {
                        x,
                        function: "negative power",
                    });
                }
                b.powi(*n)
            }
            Expr::Call(func, arg) => {
                let u = arg.jet(x, at)?;
                let phi = func.derivatives(u.value).ok_or(ExprError::Domain {
                    x,
                    function: func.name(),
                })?;
                u.chain(phi)
            }
        })
    }

    fn mentions_var(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi => false,
            Expr::Var => true,
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => e.mentions_var(),
            Expr::Bin(_, a, b) => a.mentions_var() || b.mentions_var(),
        }
    }

    fn write(&self, out: &mut fmt::Formatter<'_>, var: &str) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(out, "{c}"),
            Expr::Pi => write!(out, "pi"),
            Expr::Var => write!(out, "{var}"),
            Expr::Neg(e) => {
                write!(out, "(-")?;
                e.write(out, var)?;
                write!(out, ")")
            }
            Expr::Bin(op, a, b) => {
                write!(out, "(")?;
                a.write(out, var)?;
                write!(out, " {} ", op.symbol())?;
                b.write(out, var)?;
                write!(out, ")")
            }
            Expr::Pow(b, n) => {
                write!(out, "(")?;
                b.write(out, var)?;
                write!(out, "^{n})")
            }
            Expr::Call(func, arg) => {
                write!(out, "{}(", func.name())?;
                arg.write(out, var)?;
                write!(out, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let mut toks = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(pos, ch)) = chars.peek() {
        if ch.is_whitespace() {
            chars.next();
        } else if ch.is_ascii_digit() || ch == '.' {
            let mut end = pos;
            let mut seen_exp = false;
            while let Some(&(i, c)) = chars.peek() {
                let sign_after_exp = (c == '+' || c == '-')
                    && seen_exp
                    && matches!(src[..i].chars().last(), Some('e' | 'E'));
                if c.is_ascii_digit() || c == '.' || sign_after_exp {
                    end = i + c.len_utf8();
                    chars.next();
                } else if (c == 'e' || c == 'E') && !seen_exp {
                    // only an exponent if a digit or sign follows
                    let rest = &src[i + 1..];
                    let next = rest.chars().next();
                    let ok = match next {
                        Some(d) if d.is_ascii_digit() => true,
                        Some('+' | '-') => rest[1..].starts_with(|d: char| d.is_ascii_digit()),
                        _ => false,
                    };
                    if !ok {
                        break;
                    }
                    seen_exp = true;
                    end = i + 1;
                    chars.next();
                } else {
                    break;
                }
            }
            let text = &src[pos..end];
            let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                position: pos,
                message: format!("malformed number `{text}`"),
            })?;
            toks.push((Tok::Num(value), pos));
        } else if ch.is_alphabetic() || ch == '_' {
            let mut end = pos;
            while let Some(&(i, c)) = chars.peek() {
                if c.is_alphanumeric() || c == '_' {
                    end = i + c.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            toks.push((Tok::Ident(src[pos..end].to_string()), pos));
        } else if "+-*/^()".contains(ch) {
            toks.push((Tok::Sym(ch), pos));
            chars.next();
        } else {
            return Err(ExprError::Syntax {
                position: pos,
                message: format!("unexpected character `{ch}`"),
            });
        }
    }
    toks.push((Tok::End, src.len()));
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    variable: &'a str,
}

fn is_variable(name: &str, variable: &str) -> bool {
    name == variable
        || (variable == "theta" && name == "θ")
        || (variable == "θ" && name == "theta")
}

impl Parser<'_> {
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

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(ExprError::Syntax {
            position: self.pos(),
            message: message.into(),
        })
    }

    fn expect(&mut self, sym: char) -> Result<()> {
        if *self.peek() == Tok::Sym(sym) {
            self.bump();
            Ok(())
        } else if *self.peek() == Tok::End {
            self.syntax(format!("unexpected end of input, expected `{sym}`"))
        } else {
            self.syntax(format!("expected `{sym}`"))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Tok::Sym('-') => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Sym('+') => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if *self.peek() != Tok::Sym('^') {
            return Ok(base);
        }
        self.bump();
        let exp_pos = self.pos();
        let exponent = self.unary()?;
        let not_integer = || ExprError::Syntax {
            position: exp_pos,
            message: "exponent must be an integer constant".into(),
        };
        if exponent.mentions_var() {
            return Err(not_integer());
        }
        let n = exponent.jet(0.0, 0.0).map_err(|_| not_integer())?.value;
        if n.fract() != 0.0 || n.abs() > i32::MAX as f64 {
            return Err(not_integer());
        }
        Ok(Expr::Pow(Box::new(base), n as i32))
    }

    fn primary(&mut self) -> Result<Expr> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if name == "pi" {
                    Ok(Expr::Pi)
                } else if is_variable(&name, self.variable) {
                    Ok(Expr::Var)
                } else if let Some(func) = Func::from_name(&name) {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Err(ExprError::UnknownIdentifier { name, position: pos })
                }
            }
            Tok::End => Err(ExprError::Syntax {
                position: pos,
                message: "unexpected end of input".into(),
            }),
            Tok::Sym(c) => Err(ExprError::Syntax {
                position: pos,
                message: format!("unexpected `{c}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Formula(Expr),
    /// `numerator(r) / r`, continued to `r = 0` by its limit.
    Quotient(Expr),
}

/// Outcome of sampling `f(x)` against `f(x + period)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodCheck {
    pub period: f64,
    pub max_mismatch: f64,
    pub periodic: bool,
}

/// A parsed one-variable function. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFunction {
    source: String,
    variable: String,
    body: Body,
    period: Option<f64>,
}

/// Parse `source` as a function of `variable`.
pub fn parse(source: &str, variable: &str) -> Result<ScalarFunction> {
    ScalarFunction::parse(source, variable)
}

/// Value, first and second derivative of `func` at `x`.
pub fn eval_jet2(func: &ScalarFunction, x: f64) -> Result<Jet2> {
    func.jet2(x)
}

/// The function `r -> g(r)/r`, extended to `r = 0` by `g'(0)`.
pub fn g_tilde(g: &ScalarFunction) -> Result<ScalarFunction> {
    g.g_tilde()
}

impl ScalarFunction {
    pub fn parse(source: &str, variable: &str) -> Result<Self> {
        let toks = tokenize(source)?;
        let mut parser = Parser {
            toks,
            at: 0,
            variable,
        };
        let ast = parser.expr()?;
        if *parser.peek() != Tok::End {
            return parser.syntax("unexpected trailing input");
        }
        Ok(ScalarFunction {
            source: source.to_string(),
            variable: variable.to_string(),
            body: Body::Formula(ast),
            period: None,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variable(&self) -> &str {
        &self.variable
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    /// Sample `f(x) = f(x + period)` on 64 points of one period.
    pub fn check_period(&self, period: f64) -> Result<PeriodCheck> {
        let mut max_mismatch: f64 = 0.0;
        let mut periodic = true;
        for i in 0..64 {
            let x = period * i as f64 / 64.0;
            let a = self.eval(x)?;
            let b = self.eval(x + period)?;
            let diff = (a - b).abs();
            max_mismatch = max_mismatch.max(diff);
            if diff > 1e-9 * (1.0 + a.abs()) {
                periodic = false;
            }
        }
        Ok(PeriodCheck {
            period,
            max_mismatch,
            periodic,
        })
    }

    /// Declare the function periodic. The period is only recorded when the
    /// sample check passes; the check is returned either way.
    pub fn with_period(mut self, period: f64) -> Result<(Self, PeriodCheck)> {
        let check = self.check_period(period)?;
        self.period = check.periodic.then_some(period);
        Ok((self, check))
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.jet3(x)?.value)
    }

    pub fn jet2(&self, x: f64) -> Result<Jet2> {
        self.jet3(x).map(Jet2::from)
    }

    pub fn jet3(&self, x: f64) -> Result<Jet3> {
        match &self.body {
            Body::Formula(e) => e.jet(x, x),
            Body::Quotient(num) => {
                if x.abs() >= QUOTIENT_SWITCH {
                    Ok(num.jet(x, x)? * Jet3::variable(x).recip())
                } else {
                    // g(r)/r = g'(0) + g''(0) r/2 + g'''(0) r^2/6 + O(r^3)
                    let g = num.jet(x, 0.0)?;
                    let (c0, c1, c2) = (g.d1, g.d2 / 2.0, g.d3 / 6.0);
                    Ok(Jet3 {
                        value: c0 + x * (c1 + x * c2),
                        d1: c1 + 2.0 * c2 * x,
                        d2: 2.0 * c2,
                        d3: 0.0,
                    })
                }
            }
        }
    }

    /// `r -> g(r)/r`. Fails when `g(0)` is not zero.
    pub fn g_tilde(&self) -> Result<Self> {
        let Body::Formula(ast) = &self.body else {
            return Err(ExprError::InvalidG { value: f64::NAN });
        };
        let at_zero = ast.jet(0.0, 0.0)?.value;
        if at_zero.abs() > G_ZERO_TOL {
            return Err(ExprError::InvalidG { value: at_zero });
        }
        Ok(ScalarFunction {
            source: format!("({})/{}", self.source, self.variable),
            variable: self.variable.clone(),
            body: Body::Quotient(ast.clone()),
            period: None,
        })
    }

    /// Fully parenthesized rendering of the parsed tree. Re-parsing it gives
    /// an equivalent function.
    pub fn to_formula(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.body {
            Body::Formula(e) => e.write(f, &self.variable),
            Body::Quotient(e) => {
                write!(f, "(")?;
                e.write(f, &self.variable)?;
                write!(f, " / {})", self.variable)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn parses_preset_style_formulas() {
        let f = parse("sin(2*pi*5*theta)", "theta").unwrap();
        assert!(close(f.eval(0.05).unwrap(), 1.0, 1e-15));
        let g = parse("2*pi*r*(r-1)", "r").unwrap();
        assert!(close(g.eval(2.0).unwrap(), 4.0 * PI, 1e-15));
        let greek = parse("sin(θ)", "theta").unwrap();
        assert_eq!(greek.eval(0.3).unwrap(), 0.3f64.sin());
    }

    #[test]
    fn unclosed_paren_reports_end_offset() {
        match parse("sin(", "theta") {
            Err(ExprError::Syntax { position, .. }) => assert_eq!(position, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_unknown_identifiers_and_bad_exponents() {
        assert!(matches!(
            parse("tan(theta)", "theta"),
            Err(ExprError::UnknownIdentifier { ref name, position: 0 }) if name == "tan"
        ));
        assert!(matches!(
            parse("2*x", "r"),
            Err(ExprError::UnknownIdentifier { position: 2, .. })
        ));
        assert!(matches!(
            parse("r^0.5", "r"),
            Err(ExprError::Syntax { position: 2, .. })
        ));
        assert!(matches!(
            parse("r^r", "r"),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(parse("1 2", "r"), Err(ExprError::Syntax { position: 2, .. })));
        assert!(matches!(parse("r $ 2", "r"), Err(ExprError::Syntax { position: 2, .. })));
    }

    #[test]
    fn precedence_and_powers() {
        let f = parse("-r^2 + 2*3^2 - 8/2/2 + 1e-1 + 2.5E+1", "r").unwrap();
        // -(r^2) + 18 - 2 + 0.1 + 25 at r = 3
        assert!(close(f.eval(3.0).unwrap(), -9.0 + 18.0 - 2.0 + 0.1 + 25.0, 1e-15));
        let g = parse("r^-2 + r^(1+1)", "r").unwrap();
        assert!(close(g.eval(2.0).unwrap(), 0.25 + 4.0, 1e-15));
    }

    #[test]
    fn jets_match_elementary_calculus() {
        let f = parse("sin(2*pi*theta)", "theta").unwrap();
        let j = eval_jet2(&f, 0.0).unwrap();
        assert_eq!(j.value, 0.0);
        assert!(close(j.d1, 2.0 * PI, 1e-15));
        assert!(j.d2.abs() < 1e-12);

        let poly = parse("512*(theta-1/4)^2*(theta-3/4)^2-1", "theta").unwrap();
        let j = eval_jet2(&poly, 0.5).unwrap();
        assert!(close(j.value, 1.0, 1e-15));
        assert_eq!(j.d1, 0.0);

        let gt = parse("2*pi*cos(2*pi*r)", "r").unwrap();
        let j = eval_jet2(&gt, 0.25).unwrap();
        assert!(j.value.abs() < 1e-14);
        assert!(close(j.d1, -4.0 * PI * PI, 1e-14));
        assert!(j.d2.abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let f = parse("sqrt(r - 1)", "r").unwrap();
        assert!(matches!(f.eval(0.5), Err(ExprError::Domain { function: "sqrt", .. })));
        let f = parse("arcsin(r)", "r").unwrap();
        assert!(matches!(f.eval(1.5), Err(ExprError::Domain { function: "arcsin", .. })));
        let f = parse("1/r", "r").unwrap();
        assert!(matches!(f.eval(0.0), Err(ExprError::Domain { .. })));
        // square root at 0 has a finite value and no spurious NaN when the
        // inner derivative vanishes
        let f = parse("sqrt(r^2)", "r").unwrap();
        let j = f.jet2(0.0).unwrap();
        assert_eq!(j.value, 0.0);
    }

    #[test]
    fn arc_functions_have_exact_derivatives() {
        let f = parse("arcsin(r) + arccos(r)", "r").unwrap();
        let j = f.jet2(0.3).unwrap();
        assert!(close(j.value, PI / 2.0, 1e-15));
        assert!(j.d1.abs() < 1e-14 && j.d2.abs() < 1e-14);
        let f = parse("arcsin(r)", "r").unwrap();
        let j = f.jet2(0.6).unwrap();
        assert!(close(j.d1, 1.0 / 0.8, 1e-15));
        assert!(close(j.d2, 0.6 / 0.512, 1e-14));
    }

    #[test]
    fn g_tilde_examples() {
        let g = parse("2*pi*r*cos(2*pi*r)", "r").unwrap();
        let gt = g_tilde(&g).unwrap();
        assert!(close(gt.eval(0.0).unwrap(), 2.0 * PI, 1e-15));
        assert!(close(gt.eval(0.3).unwrap(), 2.0 * PI * (0.6 * PI).cos(), 1e-14));

        let g = parse("2*pi*r*(r-1)", "r").unwrap();
        assert!(close(g_tilde(&g).unwrap().eval(0.0).unwrap(), -2.0 * PI, 1e-15));

        let g = parse("r^2", "r").unwrap();
        let gt = g_tilde(&g).unwrap();
        assert_eq!(gt.eval(0.0).unwrap(), 0.0);
        let j = gt.jet2(1e-7).unwrap();
        assert!(close(j.value, 1e-7, 1e-12) && close(j.d1, 1.0, 1e-12));
    }

    #[test]
    fn g_tilde_rejects_nonzero_origin() {
        let g = parse("r + 1", "r").unwrap();
        assert!(matches!(g_tilde(&g), Err(ExprError::InvalidG { value }) if value == 1.0));
    }

    #[test]
    fn g_tilde_is_smooth_across_the_taylor_switch() {
        let g = parse("exp(r)*sin(2*pi*r)", "r").unwrap();
        let gt = g.g_tilde().unwrap();
        let (xb, xa) = (QUOTIENT_SWITCH * 0.999, QUOTIENT_SWITCH * 1.001);
        let below = gt.jet2(xb).unwrap();
        let above = gt.jet2(xa).unwrap();
        assert!((below.value + below.d1 * (xa - xb) - above.value).abs() < 1e-9);
        assert!((below.d1 - above.d1).abs() < 1e-5);
    }

    #[test]
    fn period_check_flags_non_periodic_formulas() {
        let f = parse("sin(2*pi*3*theta)", "theta").unwrap();
        let (f, check) = f.with_period(1.0).unwrap();
        assert!(check.periodic);
        assert_eq!(f.period(), Some(1.0));

        let f = parse("3*theta - 1.5", "theta").unwrap();
        let (f, check) = f.with_period(1.0).unwrap();
        assert!(!check.periodic);
        assert!(close(check.max_mismatch, 3.0, 1e-12));
        assert_eq!(f.period(), None);
    }

    const SHIPPED: &[(&str, &str)] = &[
        ("sin(2*pi*5*theta)", "theta"),
        ("2*cos(10*pi*theta)*sin(4*pi*theta)", "theta"),
        ("512*(theta-1/4)^2*(theta-3/4)^2-1", "theta"),
        ("3*theta - 1.5", "theta"),
        ("2*pi*theta - pi", "theta"),
        ("exp(r)*sin(2*pi*r)", "r"),
        ("2*pi*r*cos(2*pi*r)", "r"),
        ("2*pi*r*(r-1)", "r"),
        ("10/5*(r^3+1)*sin(4/5*pi*r)", "r"),
        ("sqrt(r^2+1)*abs(r+3) - arcsin(r/(r^2+2))*arccos(1/(r^2+2))", "r"),
    ];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn jets_agree_with_central_differences(idx in 0..SHIPPED.len(), x in 0.05f64..3.0) {
            let (src, var) = SHIPPED[idx];
            let f = parse(src, var).unwrap();
            let j = f.jet2(x).unwrap();
            let h = 1e-5;
            let fp = f.eval(x + h).unwrap();
            let fm = f.eval(x - h).unwrap();
            let d1 = (fp - fm) / (2.0 * h);
            prop_assert!((j.d1 - d1).abs() <= 1e-6 * (1.0 + j.d1.abs()), "d1 {} vs {}", j.d1, d1);
            let h2 = 1e-4;
            let d2 = (f.eval(x + h2).unwrap() - 2.0 * j.value + f.eval(x - h2).unwrap()) / (h2 * h2);
            prop_assert!((j.d2 - d2).abs() <= 1e-4 * (1.0 + j.d2.abs()), "d2 {} vs {}", j.d2, d2);
        }

        #[test]
        fn g_tilde_matches_the_quotient(idx in 5..9usize, r in 1e-3f64..5.0) {
            let g = parse(SHIPPED[idx].0, "r").unwrap();
            let gt = g.g_tilde().unwrap();
            let direct = g.eval(r).unwrap() / r;
            prop_assert!((gt.eval(r).unwrap() - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
        }

        #[test]
        fn printing_round_trips(idx in 0..SHIPPED.len(), x in 0.05f64..3.0) {
            let (src, var) = SHIPPED[idx];
            let f = parse(src, var).unwrap();
            let again = parse(&f.to_formula(), var).unwrap();
            prop_assert_eq!(f.jet2(x).unwrap(), again.jet2(x).unwrap());
        }

        #[test]
        fn evaluation_is_deterministic(idx in 0..SHIPPED.len(), x in -3.0f64..3.0) {
            let (src, var) = SHIPPED[idx];
            let f = parse(src, var).unwrap();
            let a = f.jet2(x);
            let b = f.jet2(x);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
                    prop_assert_eq!(a.d1.to_bits(), b.d1.to_bits());
                    prop_assert_eq!(a.d2.to_bits(), b.d2.to_bits());
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false),
            }
        }
    }
}
