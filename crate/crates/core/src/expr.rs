//! Small arithmetic expression language for user-supplied model functions.
//!
//! Grammar (usual precedence, `^` right-associative and binding tighter
//! than unary minus):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables are `u, v, w, x, t`; constants `pi` and `e`; functions `sin,
//! cos, exp, atan, sqrt, abs` (unary) and `max, min` (binary).
//!
//! Expressions compile to a flat postfix program. Evaluation in dual numbers
//! gives exact partial derivatives with respect to `u` and `v`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const MAX_STACK: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("expression `{source_text}`: {message} (at column {column})")]
pub struct ExprError {
    pub source_text: String,
    pub message: String,
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    U,
    V,
    W,
    X,
    T,
}

impl Var {
    fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Var::U => "u",
            Var::V => "v",
            Var::W => "w",
            Var::X => "x",
            Var::T => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Neg,
    Sin,
    Cos,
    Exp,
    Atan,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Load(Var),
    Unary(Unary),
    Binary(Binary),
}

/// Values of the five variables at an evaluation point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Env {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub x: f64,
    pub t: f64,
}

impl Env {
    pub fn xt(x: f64, t: f64) -> Self {
        Env {
            x,
            t,
            ..Default::default()
        }
    }

    pub fn state(x: f64, t: f64, u: f64, v: f64) -> Self {
        Env { u, v, x, t, w: 0.0 }
    }

    fn get(&self, var: Var) -> f64 {
        match var {
            Var::U => self.u,
            Var::V => self.v,
            Var::W => self.w,
            Var::X => self.x,
            Var::T => self.t,
        }
    }
}

/// A compiled expression. Cheap to clone.
#[derive(Clone)]
pub struct Expr {
    source: Arc<str>,
    ops: Arc<[Op]>,
    uses: [bool; 5],
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", &*self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(serde::de::Error::custom)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        let mut parser = Parser {
            src: source,
            bytes: source.as_bytes(),
            pos: 0,
            ops: Vec::new(),
        };
        parser.skip_ws();
        if parser.pos >= parser.bytes.len() {
            return Err(parser.error("empty expression"));
        }
        parser.expr()?;
        parser.skip_ws();
        if parser.pos < parser.bytes.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        let ops = parser.ops;
        let depth = stack_depth(&ops);
        if depth > MAX_STACK {
            return Err(ExprError {
                source_text: source.to_string(),
                message: format!("expression nests too deeply (stack depth {depth})"),
                column: 1,
            });
        }
        let mut uses = [false; 5];
        for op in ops.iter() {
            if let Op::Load(v) = op {
                uses[v.index()] = true;
            }
        }
        Ok(Expr {
            source: source.into(),
            ops: ops.into(),
            uses,
        })
    }

    /// Parses and rejects any variable outside `allowed`.
    pub fn parse_with(source: &str, allowed: &[Var]) -> Result<Expr, ExprError> {
        let e = Expr::parse(source)?;
        e.restrict(allowed)?;
        Ok(e)
    }

    pub fn restrict(&self, allowed: &[Var]) -> Result<(), ExprError> {
        for var in [Var::U, Var::V, Var::W, Var::X, Var::T] {
            if self.uses(var) && !allowed.contains(&var) {
                let names: Vec<&str> = allowed.iter().map(|v| v.name()).collect();
                return Err(ExprError {
                    source_text: self.source.to_string(),
                    message: format!(
                        "variable `{}` not allowed here (allowed: {})",
                        var.name(),
                        if names.is_empty() {
                            "none".to_string()
                        } else {
                            names.join(", ")
                        }
                    ),
                    column: self.source.find(var.name()).map_or(1, |p| p + 1),
                });
            }
        }
        Ok(())
    }

    pub fn constant(value: f64) -> Expr {
        Expr {
            source: format!("{value:?}").into(),
            ops: vec![Op::Const(value)].into(),
            uses: [false; 5],
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses(&self, var: Var) -> bool {
        self.uses[var.index()]
    }

    pub fn is_constant(&self) -> bool {
        !self.uses.iter().any(|&u| u)
    }

    pub fn eval(&self, env: &Env) -> f64 {
        run::<f64>(&self.ops, |var| env.get(var))
    }

    /// Value and partial derivatives with respect to `u` and `v`.
    pub fn eval_grad(&self, env: &Env) -> (f64, [f64; 2]) {
        let d = run::<Dual>(&self.ops, |var| match var {
            Var::U => Dual::seed(env.u, [1.0, 0.0]),
            Var::V => Dual::seed(env.v, [0.0, 1.0]),
            other => Dual::constant(env.get(other)),
        });
        (d.re, d.d)
    }

    /// Evaluates a univariate function: `u`, `v` and `w` are all bound to
    /// the argument.
    pub fn eval1(&self, xi: f64) -> f64 {
        run::<f64>(&self.ops, |var| match var {
            Var::U | Var::V | Var::W => xi,
            _ => 0.0,
        })
    }

    /// Univariate value and derivative (see [`Expr::eval1`]).
    pub fn eval1_slope(&self, xi: f64) -> (f64, f64) {
        let d = run::<Dual>(&self.ops, |var| match var {
            Var::U | Var::V | Var::W => Dual::seed(xi, [1.0, 0.0]),
            _ => Dual::constant(0.0),
        });
        (d.re, d.d[0])
    }
}

fn stack_depth(ops: &[Op]) -> usize {
    let mut depth = 0usize;
    let mut max = 0usize;
    for op in ops {
        match op {
            Op::Const(_) | Op::Load(_) => depth += 1,
            Op::Unary(_) => {}
            Op::Binary(_) => depth -= 1,
        }
        max = max.max(depth);
    }
    max
}

trait Scalar: Copy {
    fn constant(v: f64) -> Self;
    fn unary(self, op: Unary) -> Self;
    fn binary(self, rhs: Self, op: Binary) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }

    fn unary(self, op: Unary) -> Self {
        match op {
            Unary::Neg => -self,
            Unary::Sin => self.sin(),
            Unary::Cos => self.cos(),
            Unary::Exp => self.exp(),
            Unary::Atan => self.atan(),
            Unary::Sqrt => self.sqrt(),
            Unary::Abs => self.abs(),
        }
    }

    fn binary(self, rhs: Self, op: Binary) -> Self {
        match op {
            Binary::Add => self + rhs,
            Binary::Sub => self - rhs,
            Binary::Mul => self * rhs,
            Binary::Div => self / rhs,
            Binary::Pow => pow_real(self, rhs),
            Binary::Max => {
                if self >= rhs {
                    self
                } else {
                    rhs
                }
            }
            Binary::Min => {
                if self <= rhs {
                    self
                } else {
                    rhs
                }
            }
        }
    }
}

fn pow_real(a: f64, b: f64) -> f64 {
    if b == 2.0 {
        a * a
    } else if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

#[derive(Debug, Clone, Copy)]
struct Dual {
    re: f64,
    d: [f64; 2],
}

impl Dual {
    fn seed(re: f64, d: [f64; 2]) -> Self {
        Dual { re, d }
    }

    fn chain(self, value: f64, slope: f64) -> Self {
        Dual {
            re: value,
            d: [slope * self.d[0], slope * self.d[1]],
        }
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Dual { re: v, d: [0.0; 2] }
    }

    fn unary(self, op: Unary) -> Self {
        let a = self.re;
        match op {
            Unary::Neg => Dual {
                re: -a,
                d: [-self.d[0], -self.d[1]],
            },
            Unary::Sin => self.chain(a.sin(), a.cos()),
            Unary::Cos => self.chain(a.cos(), -a.sin()),
            Unary::Exp => {
                let e = a.exp();
                self.chain(e, e)
            }
            Unary::Atan => self.chain(a.atan(), 1.0 / (1.0 + a * a)),
            Unary::Sqrt => {
                let s = a.sqrt();
                self.chain(s, 0.5 / s)
            }
            Unary::Abs => {
                let sign = if a > 0.0 {
                    1.0
                } else if a < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                self.chain(a.abs(), sign)
            }
        }
    }

    fn binary(self, rhs: Self, op: Binary) -> Self {
        let (a, b) = (self, rhs);
        let zip = |f: &dyn Fn(f64, f64) -> f64| [f(a.d[0], b.d[0]), f(a.d[1], b.d[1])];
        match op {
            Binary::Add => Dual {
                re: a.re + b.re,
                d: zip(&|x, y| x + y),
            },
            Binary::Sub => Dual {
                re: a.re - b.re,
                d: zip(&|x, y| x - y),
            },
            Binary::Mul => Dual {
                re: a.re * b.re,
                d: zip(&|x, y| x * b.re + a.re * y),
            },
            Binary::Div => {
                let q = a.re / b.re;
                Dual {
                    re: q,
                    d: zip(&|x, y| (x - q * y) / b.re),
                }
            }
            Binary::Pow => {
                let value = pow_real(a.re, b.re);
                if b.d == [0.0, 0.0] {
                    let slope = if b.re == 0.0 {
                        0.0
                    } else {
                        b.re * pow_real(a.re, b.re - 1.0)
                    };
                    a.chain(value, slope)
                } else {
                    let ln = a.re.ln();
                    Dual {
                        re: value,
                        d: zip(&|x, y| value * (y * ln + b.re * x / a.re)),
                    }
                }
            }
            Binary::Max => {
                if a.re >= b.re {
                    a
                } else {
                    b
                }
            }
            Binary::Min => {
                if a.re <= b.re {
                    a
                } else {
                    b
                }
            }
        }
    }
}

fn run<S: Scalar>(ops: &[Op], load: impl Fn(Var) -> S) -> S {
    let mut stack = [S::constant(0.0); MAX_STACK];
    let mut top = 0usize;
    for op in ops {
        match *op {
            Op::Const(c) => {
                stack[top] = S::constant(c);
                top += 1;
            }
            Op::Load(var) => {
                stack[top] = load(var);
                top += 1;
            }
            Op::Unary(u) => stack[top - 1] = stack[top - 1].unary(u),
            Op::Binary(b) => {
                top -= 1;
                stack[top - 1] = stack[top - 1].binary(stack[top], b);
            }
        }
    }
    stack[0]
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    ops: Vec<Op>,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError {
            source_text: self.src.to_string(),
            message: message.into(),
            column: self.pos + 1,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<(), ExprError> {
        self.term()?;
        loop {
            if self.eat(b'+') {
                self.term()?;
                self.ops.push(Op::Binary(Binary::Add));
            } else if self.eat(b'-') {
                self.term()?;
                self.ops.push(Op::Binary(Binary::Sub));
            } else {
                return Ok(());
            }
        }
    }

    fn term(&mut self) -> Result<(), ExprError> {
        self.unary()?;
        loop {
            if self.eat(b'*') {
                self.unary()?;
                self.ops.push(Op::Binary(Binary::Mul));
            } else if self.eat(b'/') {
                self.unary()?;
                self.ops.push(Op::Binary(Binary::Div));
            } else {
                return Ok(());
            }
        }
    }

    fn unary(&mut self) -> Result<(), ExprError> {
        if self.eat(b'-') {
            self.unary()?;
            self.ops.push(Op::Unary(Unary::Neg));
            Ok(())
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<(), ExprError> {
        self.primary()?;
        if self.eat(b'^') {
            self.unary()?;
            self.ops.push(Op::Binary(Binary::Pow));
        }
        Ok(())
    }

    fn primary(&mut self) -> Result<(), ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(())
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => Err(self.error(format!("unexpected character `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<(), ExprError> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < b.len() && (b[self.pos] == b'+' || b[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < b.len() && b[self.pos].is_ascii_digit() {
                while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // `2e` is not an exponent; leave the `e` for the caller to reject
                self.pos = mark;
            }
        }
        let text = &self.src[start..self.pos];
        let value: f64 = text.parse().map_err(|_| {
            let mut e = self.error(format!("invalid number `{text}`"));
            e.column = start + 1;
            e
        })?;
        self.ops.push(Op::Const(value));
        Ok(())
    }

    fn ident(&mut self) -> Result<(), ExprError> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_alphanumeric() || b[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let mut nargs = 0;
            if self.peek() != Some(b')') {
                loop {
                    self.expr()?;
                    nargs += 1;
                    if !self.eat(b',') {
                        break;
                    }
                }
            }
            if !self.eat(b')') {
                return Err(self.error("expected `)` after function arguments"));
            }
            let op = match name {
                "sin" => Op::Unary(Unary::Sin),
                "cos" => Op::Unary(Unary::Cos),
                "exp" => Op::Unary(Unary::Exp),
                "atan" => Op::Unary(Unary::Atan),
                "sqrt" => Op::Unary(Unary::Sqrt),
                "abs" => Op::Unary(Unary::Abs),
                "max" => Op::Binary(Binary::Max),
                "min" => Op::Binary(Binary::Min),
                _ => {
                    let mut e = self.error(format!("unknown function `{name}`"));
                    e.column = start + 1;
                    return Err(e);
                }
            };
            let expected = if matches!(op, Op::Binary(_)) { 2 } else { 1 };
            if nargs != expected {
                let mut e = self.error(format!(
                    "`{name}` takes {expected} argument(s), got {nargs}"
                ));
                e.column = start + 1;
                return Err(e);
            }
            self.ops.push(op);
            return Ok(());
        }
        let op = match name {
            "u" => Op::Load(Var::U),
            "v" => Op::Load(Var::V),
            "w" => Op::Load(Var::W),
            "x" => Op::Load(Var::X),
            "t" => Op::Load(Var::T),
            "pi" => Op::Const(std::f64::consts::PI),
            "e" => Op::Const(std::f64::consts::E),
            _ => {
                let mut e = self.error(format!("unknown identifier `{name}`"));
                e.column = start + 1;
                return Err(e);
            }
        };
        self.ops.push(op);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, env: Env) -> f64 {
        Expr::parse(s).unwrap().eval(&env)
    }

    #[test]
    fn precedence_and_associativity() {
        let env = Env::default();
        assert_eq!(ev("1 + 2 * 3", env), 7.0);
        assert_eq!(ev("(1 + 2) * 3", env), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", env), 512.0);
        assert_eq!(ev("-2 ^ 2", env), -4.0);
        assert_eq!(ev("8 / 4 / 2", env), 1.0);
        assert_eq!(ev("10 - 3 - 2", env), 5.0);
        assert_eq!(ev("1.5e2 + 2E-1", env), 150.2);
    }

    #[test]
    fn variables_functions_constants() {
        let env = Env {
            u: 0.5,
            v: 2.0,
            w: 3.0,
            x: 0.25,
            t: 1.0,
        };
        assert_eq!(ev("u*v + w", env), 4.0);
        assert!((ev("sin(pi/2*x*4)", env) - 1.0).abs() < 1e-15);
        assert_eq!(ev("max(u, v) - min(u, v)", env), 1.5);
        assert_eq!(ev("abs(u - v)", env), 1.5);
        assert!((ev("exp(1) - e", env)).abs() < 1e-15);
        assert!((ev("atan(1)*4 - pi", env)).abs() < 1e-15);
        assert_eq!(ev("sqrt(v*8)", env), 4.0);
    }

    #[test]
    fn paper_targets_parse() {
        let f2 = Expr::parse("max(2*exp(-5*(v-1)^2) - 0.1*v^2, -2)").unwrap();
        assert!((f2.eval1(1.0) - 1.9).abs() < 1e-15);
        assert_eq!(f2.eval1(10.0), -2.0);
        let phi1 = Expr::parse("atan(w) + 2*w*exp(-(w-1)^2)").unwrap();
        assert!((phi1.eval1(1.0) - (1f64.atan() + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let e = Expr::parse("sin(u*v) + u^3/v - max(u, 0.2*v) + atan(u) * exp(-v) + sqrt(u+v)")
            .unwrap();
        let env = Env::state(0.3, 0.1, 0.7, 1.3);
        let (_, g) = e.eval_grad(&env);
        let h = 1e-6;
        let fd_u = (e.eval(&Env {
            u: env.u + h,
            ..env
        }) - e.eval(&Env {
            u: env.u - h,
            ..env
        })) / (2.0 * h);
        let fd_v = (e.eval(&Env {
            v: env.v + h,
            ..env
        }) - e.eval(&Env {
            v: env.v - h,
            ..env
        })) / (2.0 * h);
        assert!((g[0] - fd_u).abs() < 1e-7, "{} vs {}", g[0], fd_u);
        assert!((g[1] - fd_v).abs() < 1e-7, "{} vs {}", g[1], fd_v);
    }

    #[test]
    fn power_with_variable_exponent() {
        let e = Expr::parse("u^v").unwrap();
        let (val, g) = e.eval_grad(&Env::state(0.0, 0.0, 2.0, 3.0));
        assert_eq!(val, 8.0);
        assert!((g[0] - 12.0).abs() < 1e-12);
        assert!((g[1] - 8.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn univariate_binding() {
        let e = Expr::parse("2*u*(1-u)*(u-0.9)").unwrap();
        let (val, slope) = e.eval1_slope(0.5);
        assert!((val - 2.0 * 0.5 * 0.5 * (-0.4)).abs() < 1e-15);
        // d/du 2u(1-u)(u-0.9) = 2[(1-2u)(u-0.9) + u(1-u)]
        assert!((slope - 2.0 * (0.0 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_column() {
        let err = Expr::parse("1 + foo").unwrap_err();
        assert_eq!(err.column, 5);
        assert!(Expr::parse("sin(1, 2)").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("2 3").is_err());
        assert!(Expr::parse("1 $ 2").is_err());
    }

    #[test]
    fn restriction_rejects_foreign_variables() {
        assert!(Expr::parse_with("x + t", &[Var::X, Var::T]).is_ok());
        let err = Expr::parse_with("x + u", &[Var::X]).unwrap_err();
        assert!(err.message.contains("`u`"));
        assert!(Expr::parse("3").unwrap().is_constant());
    }
}
