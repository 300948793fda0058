//! Expression language for coefficients, integrator densities and histories.
//!
//! Grammar (highest precedence first):
//!
//! ```text
//! atom    := number | t | e | pi | ae_except_rationals
//!          | f(expr)            f in exp, log, sin, cos, sqrt, abs
//!          | chi(bound, bound)  bound := expr | inf | -inf
//!          | if(guard, expr, expr)
//!          | ( expr )
//! power   := atom [ ^ unary ]          right associative
//! unary   := - unary | power
//! product := unary { (* | /) unary }
//! sum     := product { (+ | -) product }
//! guard   := conj { or conj }
//! conj    := gatom { and gatom }
//! gatom   := not gatom | ( guard ) | sum (< | <= | > | >=) sum
//! ```
//!
//! Point evaluation follows the left-continuous convention used throughout the
//! crate: `chi(a, b)` is the indicator of `(a, b]`, and a comparison between `t`
//! and a constant that ties takes the value it has just to the left of the tie.
//! [`Expr::eval_side`] with [`Side::Right`] gives right limits instead.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NamedConst {
    E,
    Pi,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Bound {
    NegInf,
    PosInf,
    Finite(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn holds<T: PartialOrd>(self, l: T, r: T) -> bool {
        match self {
            CmpOp::Lt => l < r,
            CmpOp::Le => l <= r,
            CmpOp::Gt => l > r,
            CmpOp::Ge => l >= r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Guard {
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
    Not(Box<Guard>),
}

/// Abstract syntax tree of an expression in the single variable `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Expr {
    Num(f64),
    Const(NamedConst),
    Var,
    /// Indicator of the irrationals. Equal to 1 almost everywhere, which is the
    /// value the evaluator uses; kept in the tree so reports can display it.
    AeExceptRationals,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    Chi(Bound, Bound),
    If(Box<Guard>, Box<Expr>, Box<Expr>),
}

/// Which one-sided value to produce at a tie of a guard or indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} in `{subexpr}`")]
pub struct EvalError {
    pub message: String,
    pub subexpr: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Syntax { message: String, expected: Vec<String> },
    UnknownIdentifier(String),
    Arity { name: String, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {}", describe(.kind))]
pub struct ParseError {
    /// Byte offset into the source text.
    pub offset: usize,
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

fn describe(kind: &ParseErrorKind) -> String {
    match kind {
        ParseErrorKind::Syntax { message, expected } if expected.is_empty() => message.clone(),
        ParseErrorKind::Syntax { message, expected } => {
            format!("{message}; expected one of: {}", expected.join(", "))
        }
        ParseErrorKind::UnknownIdentifier(name) => format!("unknown identifier `{name}`"),
        ParseErrorKind::Arity {
            name,
            expected,
            found,
        } => format!("`{name}` takes {expected} argument(s), found {found}"),
    }
}

/// Parses an expression.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        src: text,
        tokens,
        pos: 0,
    };
    let e = p.sum()?;
    p.expect_end()?;
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl Expr {
    pub fn num(x: f64) -> Expr {
        Expr::Num(x)
    }

    /// Value at `t`, using left values at ties.
    pub fn eval<T: Scalar>(&self, t: T) -> Result<T, EvalError> {
        self.eval_side(t, Side::Left)
    }

    pub fn eval_side<T: Scalar>(&self, t: T, side: Side) -> Result<T, EvalError> {
        let v = match self {
            Expr::Num(x) => T::lit(*x),
            Expr::Const(NamedConst::E) => T::E(),
            Expr::Const(NamedConst::Pi) => T::PI(),
            Expr::Var => t,
            Expr::AeExceptRationals => T::one(),
            Expr::Neg(a) => -a.eval_side(t, side)?,
            Expr::Binary(op, a, b) => {
                let l = a.eval_side(t, side)?;
                let r = b.eval_side(t, side)?;
                self.binary(*op, l, r)?
            }
            Expr::Call(f, a) => {
                let x = a.eval_side(t, side)?;
                match f {
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= T::zero() {
                            return Err(self.domain("log of a nonpositive argument"));
                        }
                        x.ln()
                    }
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Sqrt => {
                        if x < T::zero() {
                            return Err(self.domain("square root of a negative argument"));
                        }
                        x.sqrt()
                    }
                    Func::Abs => x.abs(),
                }
            }
            Expr::Chi(lo, hi) => {
                let above = match lo {
                    Bound::NegInf => true,
                    Bound::PosInf => false,
                    Bound::Finite(a) => {
                        let a = a.eval_side(t, side)?;
                        match side {
                            Side::Left => t > a,
                            Side::Right => t >= a,
                        }
                    }
                };
                let below = match hi {
                    Bound::NegInf => false,
                    Bound::PosInf => true,
                    Bound::Finite(b) => {
                        let b = b.eval_side(t, side)?;
                        match side {
                            Side::Left => t <= b,
                            Side::Right => t < b,
                        }
                    }
                };
                if above && below {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Expr::If(g, a, b) => {
                if g.holds(t, side)? {
                    a.eval_side(t, side)?
                } else {
                    b.eval_side(t, side)?
                }
            }
        };
        if !v.is_finite() {
            return Err(self.domain("non-finite result"));
        }
        Ok(v)
    }

    fn binary<T: Scalar>(&self, op: BinOp, l: T, r: T) -> Result<T, EvalError> {
        Ok(match op {
            BinOp::Add => l + r,
            BinOp::Sub => l - r,
            BinOp::Mul => l * r,
            BinOp::Div => {
                if r == T::zero() {
                    return Err(self.domain("division by zero"));
                }
                l / r
            }
            BinOp::Pow => {
                let integral = r == r.round() && r.abs() <= T::lit(1024.0);
                if l == T::zero() && r < T::zero() {
                    return Err(self.domain("division by zero"));
                }
                if integral {
                    l.powi(r.to_i32().unwrap_or(0))
                } else if l < T::zero() {
                    return Err(self.domain("negative base with non-integer exponent"));
                } else {
                    l.powf(r)
                }
            }
        })
    }

    fn domain(&self, message: &str) -> EvalError {
        EvalError {
            message: message.to_string(),
            subexpr: self.to_string(),
        }
    }

    /// True when the expression does not depend on `t`.
    pub fn is_t_free(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Const(_) | Expr::AeExceptRationals => true,
            Expr::Var => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.is_t_free(),
            Expr::Binary(_, a, b) => a.is_t_free() && b.is_t_free(),
            Expr::Chi(_, _) => false,
            Expr::If(g, a, b) => g.is_t_free() && a.is_t_free() && b.is_t_free(),
        }
    }

    /// The value of a `t`-free expression.
    pub fn as_constant(&self) -> Option<f64> {
        if self.is_t_free() {
            self.eval(0.0f64).ok()
        } else {
            None
        }
    }

    /// Whether the tree carries the almost-everywhere marker.
    pub fn has_null_exception(&self) -> bool {
        match self {
            Expr::AeExceptRationals => true,
            Expr::Num(_) | Expr::Const(_) | Expr::Var => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.has_null_exception(),
            Expr::Binary(_, a, b) => a.has_null_exception() || b.has_null_exception(),
            Expr::Chi(a, b) => [a, b].iter().any(|b| match b {
                Bound::Finite(e) => e.has_null_exception(),
                _ => false,
            }),
            Expr::If(g, a, b) => {
                g.has_null_exception() || a.has_null_exception() || b.has_null_exception()
            }
        }
    }

    /// Points where the expression may jump: finite constant endpoints of
    /// `chi` and constants compared against `t` in guards.
    pub fn critical_points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_critical(&mut out);
        out.retain(|x| x.is_finite());
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    fn collect_critical(&self, out: &mut Vec<f64>) {
        match self {
            Expr::Num(_) | Expr::Const(_) | Expr::Var | Expr::AeExceptRationals => {}
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_critical(out),
            Expr::Binary(_, a, b) => {
                a.collect_critical(out);
                b.collect_critical(out);
            }
            Expr::Chi(lo, hi) => {
                for b in [lo, hi] {
                    if let Bound::Finite(e) = b {
                        if let Some(c) = e.as_constant() {
                            out.push(c);
                        }
                        e.collect_critical(out);
                    }
                }
            }
            Expr::If(g, a, b) => {
                g.collect_critical(out);
                a.collect_critical(out);
                b.collect_critical(out);
            }
        }
    }
}

impl Guard {
    fn holds<T: Scalar>(&self, t: T, side: Side) -> Result<bool, EvalError> {
        Ok(match self {
            Guard::Cmp(op, a, b) => {
                let l = a.eval_side(t, side)?;
                let r = b.eval_side(t, side)?;
                if l == r {
                    // One-sided value at a tie between `t` and a constant.
                    let var_left = **a == Expr::Var && b.is_t_free();
                    let var_right = **b == Expr::Var && a.is_t_free();
                    if var_left || var_right {
                        let below = side == Side::Left;
                        // `t` sits just below (Left) or above (Right) the constant.
                        let t_less = if var_left { below } else { !below };
                        return Ok(if t_less {
                            matches!(op, CmpOp::Lt | CmpOp::Le)
                        } else {
                            matches!(op, CmpOp::Gt | CmpOp::Ge)
                        });
                    }
                }
                op.holds(l, r)
            }
            Guard::And(a, b) => a.holds(t, side)? && b.holds(t, side)?,
            Guard::Or(a, b) => a.holds(t, side)? || b.holds(t, side)?,
            Guard::Not(a) => !a.holds(t, side)?,
        })
    }

    fn is_t_free(&self) -> bool {
        match self {
            Guard::Cmp(_, a, b) => a.is_t_free() && b.is_t_free(),
            Guard::And(a, b) | Guard::Or(a, b) => a.is_t_free() && b.is_t_free(),
            Guard::Not(a) => a.is_t_free(),
        }
    }

    fn has_null_exception(&self) -> bool {
        match self {
            Guard::Cmp(_, a, b) => a.has_null_exception() || b.has_null_exception(),
            Guard::And(a, b) | Guard::Or(a, b) => a.has_null_exception() || b.has_null_exception(),
            Guard::Not(a) => a.has_null_exception(),
        }
    }

    fn collect_critical(&self, out: &mut Vec<f64>) {
        match self {
            Guard::Cmp(_, a, b) => {
                if **a == Expr::Var {
                    if let Some(c) = b.as_constant() {
                        out.push(c);
                    }
                } else if **b == Expr::Var {
                    if let Some(c) = a.as_constant() {
                        out.push(c);
                    }
                }
                a.collect_critical(out);
                b.collect_critical(out);
            }
            Guard::And(a, b) | Guard::Or(a, b) => {
                a.collect_critical(out);
                b.collect_critical(out);
            }
            Guard::Not(a) => a.collect_critical(out),
        }
    }
}

// ---------------------------------------------------------------------------
// Printing

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POWER: u8 = 4;
const PREC_ATOM: u8 = 5;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, _, _) => PREC_SUM,
            Expr::Binary(BinOp::Mul | BinOp::Div, _, _) => PREC_PRODUCT,
            Expr::Neg(_) => PREC_UNARY,
            Expr::Binary(BinOp::Pow, _, _) => PREC_POWER,
            Expr::Num(x) if x.is_sign_negative() => PREC_UNARY,
            _ => PREC_ATOM,
        }
    }

    fn write_min(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "(")?;
            self.write_bare(f)?;
            write!(f, ")")
        } else {
            self.write_bare(f)
        }
    }

    fn write_bare(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Const(NamedConst::E) => write!(f, "e"),
            Expr::Const(NamedConst::Pi) => write!(f, "pi"),
            Expr::Var => write!(f, "t"),
            Expr::AeExceptRationals => write!(f, "ae_except_rationals"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.write_min(f, PREC_UNARY)
            }
            Expr::Binary(op, a, b) => {
                let (sym, lmin, rmin) = match op {
                    BinOp::Add => (" + ", PREC_SUM, PREC_PRODUCT),
                    BinOp::Sub => (" - ", PREC_SUM, PREC_PRODUCT),
                    BinOp::Mul => (" * ", PREC_PRODUCT, PREC_UNARY),
                    BinOp::Div => (" / ", PREC_PRODUCT, PREC_UNARY),
                    BinOp::Pow => ("^", PREC_ATOM, PREC_UNARY),
                };
                a.write_min(f, lmin)?;
                write!(f, "{sym}")?;
                b.write_min(f, rmin)
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_min(f, PREC_SUM)?;
                write!(f, ")")
            }
            Expr::Chi(lo, hi) => {
                write!(f, "chi(")?;
                lo.write(f)?;
                write!(f, ", ")?;
                hi.write(f)?;
                write!(f, ")")
            }
            Expr::If(g, a, b) => {
                write!(f, "if(")?;
                g.write_min(f, 1)?;
                write!(f, ", {a}, {b})")
            }
        }
    }
}

impl Bound {
    fn write(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::NegInf => write!(f, "-inf"),
            Bound::PosInf => write!(f, "inf"),
            Bound::Finite(e) => write!(f, "{e}"),
        }
    }
}

impl Guard {
    fn precedence(&self) -> u8 {
        match self {
            Guard::Or(_, _) => 1,
            Guard::And(_, _) => 2,
            Guard::Not(_) => 3,
            Guard::Cmp(_, _, _) => 4,
        }
    }

    fn write_min(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "(")?;
            self.write_bare(f)?;
            write!(f, ")")
        } else {
            self.write_bare(f)
        }
    }

    fn write_bare(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Cmp(op, a, b) => write!(f, "{a} {} {b}", op.symbol()),
            Guard::And(a, b) => {
                a.write_min(f, 2)?;
                write!(f, " and ")?;
                b.write_min(f, 3)
            }
            Guard::Or(a, b) => {
                a.write_min(f, 1)?;
                write!(f, " or ")?;
                b.write_min(f, 2)
            }
            Guard::Not(a) => {
                write!(f, "not ")?;
                a.write_min(f, 3)
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_bare(f)
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_bare(f)
    }
}

// ---------------------------------------------------------------------------
// Lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(x) => format!("number {x}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn error_at(src: &str, offset: usize, kind: ParseErrorKind) -> ParseError {
    let (line, column) = line_col(src, offset);
    ParseError {
        offset,
        line,
        column,
        kind,
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
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
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                if eq {
                    i += 1;
                }
                match (c, eq) {
                    (b'<', false) => Tok::Lt,
                    (b'<', true) => Tok::Le,
                    (_, false) => Tok::Gt,
                    (_, true) => Tok::Ge,
                }
            }
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text = &src[i..j];
                let value: f64 = text.parse().map_err(|_| {
                    error_at(
                        src,
                        start,
                        ParseErrorKind::Syntax {
                            message: format!("malformed number `{text}`"),
                            expected: vec![],
                        },
                    )
                })?;
                out.push((Tok::Num(value), start));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push((Tok::Ident(src[i..j].to_string()), start));
                i = j;
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(error_at(
                    src,
                    start,
                    ParseErrorKind::Syntax {
                        message: format!("unexpected character `{ch}`"),
                        expected: vec![],
                    },
                ));
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::Eof, src.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

const EXPR_START: &[&str] = &["number", "`t`", "`(`", "`-`", "function name"];

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax(&self, message: String, expected: &[&str]) -> ParseError {
        error_at(
            self.src,
            self.offset(),
            ParseErrorKind::Syntax {
                message,
                expected: expected.iter().map(|s| s.to_string()).collect(),
            },
        )
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            let found = self.peek().describe();
            Err(self.syntax(format!("unexpected {found}"), &[&tok.describe()]))
        }
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            let found = self.peek().describe();
            Err(self.syntax(
                format!("unexpected {found}"),
                &["operator", "end of input"],
            ))
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exp = self.unary()?;
            Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        let at = self.pos;
        match self.bump() {
            Tok::Num(x) => Ok(Expr::Num(x)),
            Tok::LParen => {
                let e = self.sum()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => self.ident(name, offset),
            other => {
                self.pos = at;
                Err(self.syntax(format!("unexpected {}", other.describe()), EXPR_START))
            }
        }
    }

    fn ident(&mut self, name: String, offset: usize) -> Result<Expr, ParseError> {
        match name.as_str() {
            "t" => return Ok(Expr::Var),
            "e" => return Ok(Expr::Const(NamedConst::E)),
            "pi" => return Ok(Expr::Const(NamedConst::Pi)),
            "ae_except_rationals" => return Ok(Expr::AeExceptRationals),
            "inf" => {
                return Err(error_at(
                    self.src,
                    offset,
                    ParseErrorKind::Syntax {
                        message: "`inf` is only allowed as an endpoint of `chi`".into(),
                        expected: vec![],
                    },
                ))
            }
            _ => {}
        }
        if let Some(func) = Func::from_name(&name) {
            self.expect(Tok::LParen)?;
            let mut args = vec![self.sum()?];
            while *self.peek() == Tok::Comma {
                self.bump();
                args.push(self.sum()?);
            }
            self.expect(Tok::RParen)?;
            if args.len() != 1 {
                return Err(arity(self.src, offset, &name, 1, args.len()));
            }
            return Ok(Expr::Call(func, Box::new(args.pop().unwrap())));
        }
        match name.as_str() {
            "chi" => {
                self.expect(Tok::LParen)?;
                let mut args = vec![self.bound()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.bound()?);
                }
                self.expect(Tok::RParen)?;
                if args.len() != 2 {
                    return Err(arity(self.src, offset, &name, 2, args.len()));
                }
                let hi = args.pop().unwrap();
                let lo = args.pop().unwrap();
                Ok(Expr::Chi(lo, hi))
            }
            "if" => {
                self.expect(Tok::LParen)?;
                let guard = self.guard()?;
                let mut branches = Vec::new();
                while *self.peek() == Tok::Comma {
                    self.bump();
                    branches.push(self.sum()?);
                }
                self.expect(Tok::RParen)?;
                if branches.len() != 2 {
                    return Err(arity(self.src, offset, &name, 3, branches.len() + 1));
                }
                let b = branches.pop().unwrap();
                let a = branches.pop().unwrap();
                Ok(Expr::If(Box::new(guard), Box::new(a), Box::new(b)))
            }
            _ => Err(error_at(
                self.src,
                offset,
                ParseErrorKind::UnknownIdentifier(name),
            )),
        }
    }

    fn bound(&mut self) -> Result<Bound, ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == "inf" => {
                self.bump();
                Ok(Bound::PosInf)
            }
            Tok::Minus if matches!(&self.tokens[self.pos + 1].0, Tok::Ident(s) if s == "inf") => {
                self.bump();
                self.bump();
                Ok(Bound::NegInf)
            }
            _ => Ok(Bound::Finite(Box::new(self.sum()?))),
        }
    }

    fn guard(&mut self) -> Result<Guard, ParseError> {
        let mut lhs = self.conj()?;
        while matches!(self.peek(), Tok::Ident(s) if s == "or") {
            self.bump();
            let rhs = self.conj()?;
            lhs = Guard::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Guard, ParseError> {
        let mut lhs = self.gatom()?;
        while matches!(self.peek(), Tok::Ident(s) if s == "and") {
            self.bump();
            let rhs = self.gatom()?;
            lhs = Guard::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn gatom(&mut self) -> Result<Guard, ParseError> {
        if matches!(self.peek(), Tok::Ident(s) if s == "not") {
            self.bump();
            return Ok(Guard::Not(Box::new(self.gatom()?)));
        }
        if *self.peek() == Tok::LParen {
            // Either a parenthesised guard or a parenthesised arithmetic operand.
            let save = self.pos;
            self.bump();
            if let Ok(g) = self.guard() {
                if *self.peek() == Tok::RParen {
                    self.bump();
                    let follows = match self.peek() {
                        Tok::Ident(s) => s == "and" || s == "or",
                        Tok::Comma | Tok::RParen | Tok::Eof => true,
                        _ => false,
                    };
                    if follows {
                        return Ok(g);
                    }
                }
            }
            self.pos = save;
        }
        let lhs = self.sum()?;
        let op = match self.peek() {
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            other => {
                let found = other.describe();
                return Err(self.syntax(
                    format!("unexpected {found} in guard"),
                    &["`<`", "`<=`", "`>`", "`>=`"],
                ));
            }
        };
        self.bump();
        let rhs = self.sum()?;
        Ok(Guard::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }
}

fn arity(src: &str, offset: usize, name: &str, expected: usize, found: usize) -> ParseError {
    error_at(
        src,
        offset,
        ParseErrorKind::Arity {
            name: name.to_string(),
            expected,
            found,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, t: f64) -> f64 {
        parse(s).unwrap().eval(t).unwrap()
    }

    #[test]
    fn parses_indicator_coefficient() {
        let e = parse("t^4 * chi(4, inf) * ae_except_rationals").unwrap();
        let expected = Expr::Binary(
            BinOp::Mul,
            Box::new(Expr::Binary(
                BinOp::Mul,
                Box::new(Expr::Binary(
                    BinOp::Pow,
                    Box::new(Expr::Var),
                    Box::new(Expr::Num(4.0)),
                )),
                Box::new(Expr::Chi(
                    Bound::Finite(Box::new(Expr::Num(4.0))),
                    Bound::PosInf,
                )),
            )),
            Box::new(Expr::AeExceptRationals),
        );
        assert_eq!(e, expected);
        assert!(e.has_null_exception());
        assert_eq!(e.critical_points(), vec![4.0]);
        assert_eq!(e.eval(5.0).unwrap(), 625.0);
    }

    #[test]
    fn constant_zero() {
        let e = parse("0").unwrap();
        assert_eq!(e, Expr::Num(0.0));
        assert_eq!(e.as_constant(), Some(0.0));
    }

    #[test]
    fn rational_expression() {
        assert_eq!(ev("1/(t^2)", 3.0), 1.0 / 9.0);
        assert!((ev("1/(t*(t-1))", 3.0) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ae_marker_is_one() {
        assert_eq!(ev("t^4 * ae_except_rationals", 2.0), 16.0);
        assert_eq!(ev("ae_except_rationals", std::f64::consts::PI), 1.0);
    }

    #[test]
    fn indicator_is_left_continuous() {
        assert_eq!(ev("chi(4, inf)", 3.0), 0.0);
        assert_eq!(ev("chi(4, inf)", 4.0), 0.0);
        assert_eq!(ev("chi(4, inf)", 4.5), 1.0);
        let e = parse("chi(1, 2)").unwrap();
        assert_eq!(e.eval_side(1.0, Side::Right).unwrap(), 1.0);
        assert_eq!(e.eval_side(2.0, Side::Left).unwrap(), 1.0);
        assert_eq!(e.eval_side(2.0, Side::Right).unwrap(), 0.0);
        assert_eq!(ev("chi(-inf, 0)", -1e9), 1.0);
    }

    #[test]
    fn guard_ties_take_left_value() {
        for src in ["if(t < 1, 5, 7)", "if(t <= 1, 5, 7)", "if(1 > t, 5, 7)"] {
            let e = parse(src).unwrap();
            assert_eq!(e.eval(1.0).unwrap(), 5.0, "{src}");
            assert_eq!(e.eval_side(1.0, Side::Right).unwrap(), 7.0, "{src}");
        }
        let e = parse("if(t > 0 and not t > 2 or t < -5, 1, 0)").unwrap();
        assert_eq!(e.eval(1.0).unwrap(), 1.0);
        assert_eq!(e.eval(3.0).unwrap(), 0.0);
        assert_eq!(e.eval(-6.0).unwrap(), 1.0);
        assert_eq!(e.critical_points(), vec![-5.0, 0.0, 2.0]);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("-2^2", 0.0), -4.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("8 - 3 - 2", 0.0), 3.0);
        assert_eq!(ev("8 / 4 / 2", 0.0), 1.0);
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert!((ev("exp(1) - e", 0.0)).abs() < 1e-15);
        assert!((ev("sin(pi/2) + cos(0) + sqrt(4) + abs(-1) + log(e)", 0.0) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn domain_errors_name_subexpression() {
        let err = parse("1/(t-1)").unwrap().eval(1.0).unwrap_err();
        assert!(err.message.contains("division by zero"));
        assert_eq!(err.subexpr, "1.0 / (t - 1.0)");
        let err = parse("log(t)").unwrap().eval(0.0).unwrap_err();
        assert!(err.message.contains("log"));
        assert!(parse("sqrt(t)").unwrap().eval(-1.0).is_err());
        assert!(parse("t^0.5").unwrap().eval(-1.0).is_err());
        assert!(parse("exp(t)").unwrap().eval(1e4).is_err());
    }

    #[test]
    fn parse_errors() {
        let err = parse("t +").unwrap_err();
        assert_eq!(err.offset, 3);
        assert_eq!((err.line, err.column), (1, 4));
        assert!(matches!(err.kind, ParseErrorKind::Syntax { ref expected, .. } if !expected.is_empty()));

        let err = parse("2 * foo").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("foo".into()));
        assert_eq!(err.column, 5);

        let err = parse("exp(1, 2)").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Arity { expected: 1, found: 2, .. }));
        let err = parse("chi(1)").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Arity { expected: 2, found: 1, .. }));
        let err = parse("if(t < 1, 2)").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Arity { expected: 3, found: 2, .. }));

        assert!(parse("inf").is_err());
        assert!(parse("(t").is_err());
        assert!(parse("t $ 2").is_err());

        let err = parse("1 +\n  * 2").unwrap_err();
        assert_eq!((err.line, err.column), (2, 3));
        assert!(err.to_string().starts_with("line 2, column 3"));
    }

    #[test]
    fn parenthesised_guards() {
        let e = parse("if((t < 1 or t > 3) and (t + 1) > 0, 1, 0)").unwrap();
        assert_eq!(e.eval(0.0).unwrap(), 1.0);
        assert_eq!(e.eval(2.0).unwrap(), 0.0);
        let printed = e.to_string();
        assert_eq!(parse(&printed).unwrap(), e);
    }

    #[test]
    fn eval_is_deterministic() {
        let e = parse("sin(t)^2 * exp(-t/3) + log(t + 2)").unwrap();
        let a: f64 = e.eval(1.234).unwrap();
        let b: f64 = e.eval(1.234).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn generic_over_f32() {
        let e = parse("t^2 + 1").unwrap();
        assert_eq!(e.eval(2.0f32).unwrap(), 5.0f32);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|n| Expr::Num(n as f64 / 8.0)),
            Just(Expr::Var),
            Just(Expr::Const(NamedConst::E)),
            Just(Expr::Const(NamedConst::Pi)),
            Just(Expr::AeExceptRationals),
            (0u32..20).prop_map(|a| Expr::Chi(
                Bound::Finite(Box::new(Expr::Num(a as f64))),
                Bound::PosInf
            )),
        ];
        leaf.prop_recursive(5, 48, 3, |inner| {
            let guard = (
                prop_oneof![
                    Just(CmpOp::Lt),
                    Just(CmpOp::Le),
                    Just(CmpOp::Gt),
                    Just(CmpOp::Ge)
                ],
                inner.clone(),
                inner.clone(),
            )
                .prop_map(|(op, a, b)| Guard::Cmp(op, Box::new(a), Box::new(b)));
            let guard = guard.prop_recursive(2, 6, 2, |g| {
                prop_oneof![
                    (g.clone(), g.clone()).prop_map(|(a, b)| Guard::And(Box::new(a), Box::new(b))),
                    (g.clone(), g.clone()).prop_map(|(a, b)| Guard::Or(Box::new(a), Box::new(b))),
                    g.prop_map(|a| Guard::Not(Box::new(a))),
                ]
            });
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
                    .prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
                (
                    prop_oneof![
                        Just(Func::Exp),
                        Just(Func::Log),
                        Just(Func::Sin),
                        Just(Func::Cos),
                        Just(Func::Sqrt),
                        Just(Func::Abs)
                    ],
                    inner.clone()
                )
                    .prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Chi(
                    Bound::Finite(Box::new(a)),
                    Bound::Finite(Box::new(b))
                )),
                (guard, inner.clone(), inner)
                    .prop_map(|(g, a, b)| Expr::If(Box::new(g), Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e, "printed as {}", printed);
            prop_assert_eq!(parse(&reparsed.to_string()).unwrap(), reparsed);
        }

        #[test]
        fn ae_marker_never_changes_values(e in arb_expr(), t in -10.0f64..10.0) {
            let wrapped = Expr::Binary(BinOp::Mul, Box::new(e.clone()), Box::new(Expr::AeExceptRationals));
            match (e.eval(t), wrapped.eval(t)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }
    }
}
