//! Symbolic expressions over normalized inputs `x1..x10`.
//!
//! Grammar (whitespace is ignored):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' ['-'] integer)?
//! atom   := number | variable | func '(' expr ')' | '(' expr ')'
//! func   := 'cos' | 'tan' | 'tanh' | 'exp' | 'log'
//! number := digits ['.' digits] [('e' | 'E') ['+' | '-'] digits]
//! variable := 'x' integer            (1..=10)
//! ```
//!
//! Subtraction is stored as addition of a negation, so `a - b` parses to
//! `Add(a, Neg(b))`.

mod bank;
mod parser;
mod simplify;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bank::{bank_lookup, BankEntry, EqSet, EquationBank, BANK_SHA256, BANK_TEXT};
pub use parser::parse_expression;
pub use simplify::{linear_coefficient, simplify, sum_terms};

/// Highest variable index the grammar accepts.
pub const MAX_VARIABLE: usize = 10;

/// Denominators (and tangent cosines) smaller than this in magnitude are
/// treated as poles.
pub const POLE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Func {
    Cos,
    Tan,
    Tanh,
    Exp,
    Log,
}

impl Func {
    pub const ALL: [Func; 5] = [Func::Cos, Func::Tan, Func::Tanh, Func::Exp, Func::Log];

    pub fn name(self) -> &'static str {
        match self {
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Value and derivative at `u`, with pole and domain checks.
    fn apply(self, u: f64) -> Result<(f64, f64)> {
        Ok(match self {
            Func::Cos => (u.cos(), -u.sin()),
            Func::Tan => {
                let c = u.cos();
                if c.abs() < POLE_EPS {
                    return Err(Error::Pole(u));
                }
                (u.tan(), 1.0 / (c * c))
            }
            Func::Tanh => {
                let t = u.tanh();
                (t, 1.0 - t * t)
            }
            Func::Exp => {
                let e = u.exp();
                (e, e)
            }
            Func::Log => {
                if u <= 0.0 {
                    return Err(Error::Domain(format!("log of non-positive argument {u}")));
                }
                (u.ln(), 1.0 / u)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    /// A non-negative literal keeps its source spelling; constants made by
    /// folding carry their shortest round-trip form.
    Const { value: f64, text: String },
    /// 1-based input index.
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Neg(Box<Expr>),
    Func(Func, Box<Expr>),
}

/// Value plus whether any bound input fell outside `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub out_of_domain: bool,
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        Expr::Const { value, text: value.to_string() }
    }

    /// Constant rounded to `digits` significant digits.
    pub fn constant_rounded(value: f64, digits: usize) -> Expr {
        let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), value).parse().unwrap_or(value);
        Expr::constant(rounded)
    }

    /// Copy with every constant rounded to `digits` significant digits.
    pub fn round_constants(&self, digits: usize) -> Expr {
        let r = |e: &Expr| Box::new(e.round_constants(digits));
        match self {
            Expr::Const { value, .. } => Expr::constant_rounded(*value, digits),
            Expr::Var(i) => Expr::Var(*i),
            Expr::Add(a, b) => Expr::Add(r(a), r(b)),
            Expr::Mul(a, b) => Expr::Mul(r(a), r(b)),
            Expr::Div(a, b) => Expr::Div(r(a), r(b)),
            Expr::Pow(a, n) => Expr::Pow(r(a), *n),
            Expr::Neg(a) => Expr::Neg(r(a)),
            Expr::Func(f, a) => Expr::Func(*f, r(a)),
        }
    }

    pub fn var(index: usize) -> Expr {
        Expr::Var(index)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(Expr::Neg(Box::new(b))))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        Expr::Pow(Box::new(a), n)
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::Neg(Box::new(a))
    }

    pub fn func(f: Func, a: Expr) -> Expr {
        Expr::Func(f, Box::new(a))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const { value, .. } => Some(*value),
            _ => None,
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const { .. } | Expr::Var(_) => vec![],
            Expr::Add(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![a, b],
            Expr::Pow(a, _) | Expr::Neg(a) | Expr::Func(_, a) => vec![a],
        }
    }

    /// Largest variable index referenced, 0 for a constant expression.
    pub fn max_variable(&self) -> usize {
        match self {
            Expr::Var(i) => *i,
            _ => self.children().iter().map(|c| c.max_variable()).max().unwrap_or(0),
        }
    }

    /// Sorted, deduplicated variable indices.
    pub fn variables(&self) -> Vec<usize> {
        fn walk(e: &Expr, out: &mut Vec<usize>) {
            if let Expr::Var(i) = e {
                out.push(*i);
            }
            for c in e.children() {
                walk(c, out);
            }
        }
        let mut v = Vec::new();
        walk(self, &mut v);
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn functions(&self) -> Vec<Func> {
        fn walk(e: &Expr, out: &mut Vec<Func>) {
            if let Expr::Func(f, _) = e {
                if !out.contains(f) {
                    out.push(*f);
                }
            }
            for c in e.children() {
                walk(c, out);
            }
        }
        let mut v = Vec::new();
        walk(self, &mut v);
        v
    }

    /// Evaluates with `x[0]` bound to `x1`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.dual(x, None).map(|(v, _)| v)
    }

    /// Like [`Expr::eval`] but also reports inputs outside the unit interval.
    pub fn eval_checked(&self, x: &[f64]) -> Result<Evaluation> {
        let value = self.eval(x)?;
        let out_of_domain = self.variables().iter().any(|&i| !(0.0..=1.0).contains(&x[i - 1]));
        Ok(Evaluation { value, out_of_domain })
    }

    /// Exact partial derivative with respect to `x_var` (1-based), computed by
    /// differentiating each node alongside its value.
    pub fn partial(&self, var: usize, x: &[f64]) -> Result<f64> {
        if var == 0 || var > x.len() {
            return Err(Error::UnboundVariable(var));
        }
        self.dual(x, Some(var)).map(|(_, d)| d)
    }

    /// (value, derivative) by forward-mode differentiation.
    fn dual(&self, x: &[f64], var: Option<usize>) -> Result<(f64, f64)> {
        Ok(match self {
            Expr::Const { value, .. } => (*value, 0.0),
            Expr::Var(i) => {
                let v = *x.get(i.wrapping_sub(1)).ok_or(Error::UnboundVariable(*i))?;
                (v, if var == Some(*i) { 1.0 } else { 0.0 })
            }
            Expr::Add(a, b) => {
                let (va, da) = a.dual(x, var)?;
                let (vb, db) = b.dual(x, var)?;
                (va + vb, da + db)
            }
            Expr::Mul(a, b) => {
                let (va, da) = a.dual(x, var)?;
                let (vb, db) = b.dual(x, var)?;
                (va * vb, da * vb + va * db)
            }
            Expr::Div(a, b) => {
                let (va, da) = a.dual(x, var)?;
                let (vb, db) = b.dual(x, var)?;
                if vb.abs() < POLE_EPS {
                    return Err(Error::Pole(vb));
                }
                (va / vb, (da * vb - va * db) / (vb * vb))
            }
            Expr::Pow(a, n) => {
                let (va, da) = a.dual(x, var)?;
                if *n < 0 && va.abs() < POLE_EPS {
                    return Err(Error::Pole(va));
                }
                let d = if *n == 0 { 0.0 } else { *n as f64 * va.powi(n - 1) * da };
                (va.powi(*n), d)
            }
            Expr::Neg(a) => {
                let (va, da) = a.dual(x, var)?;
                (-va, -da)
            }
            Expr::Func(f, a) => {
                let (va, da) = a.dual(x, var)?;
                let (v, fd) = f.apply(va)?;
                (v, fd * da)
            }
        })
    }
}

// Binding strength of each printed form; a child binding looser than its
// context is parenthesized.
const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Const { value, .. } if value.is_sign_negative() => PREC_UNARY,
        Expr::Const { .. } | Expr::Var(_) | Expr::Func(..) => PREC_ATOM,
        Expr::Add(..) => PREC_SUM,
        Expr::Mul(..) | Expr::Div(..) => PREC_PRODUCT,
        Expr::Neg(_) => PREC_UNARY,
        Expr::Pow(..) => 4,
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        write!(f, "(")?;
        write_expr(f, e)?;
        write!(f, ")")
    } else {
        write_expr(f, e)
    }
}

fn const_text(value: f64, text: &str) -> String {
    let t = text.trim_start_matches('-');
    if t.is_empty() || t.parse::<f64>().ok() != Some(value.abs()) {
        value.abs().to_string()
    } else {
        t.to_string()
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Const { value, text } => {
            if value.is_sign_negative() {
                write!(f, "-")?;
            }
            write!(f, "{}", const_text(*value, text))
        }
        Expr::Var(i) => write!(f, "x{i}"),
        Expr::Add(a, b) => {
            write_at(f, a, PREC_SUM)?;
            match b.as_ref() {
                Expr::Neg(inner) => {
                    write!(f, " - ")?;
                    write_at(f, inner, PREC_PRODUCT)
                }
                Expr::Const { value, text } if value.is_sign_negative() => {
                    write!(f, " - {}", const_text(*value, text))
                }
                _ => {
                    write!(f, " + ")?;
                    write_at(f, b, PREC_PRODUCT)
                }
            }
        }
        Expr::Mul(a, b) | Expr::Div(a, b) => {
            write_at(f, a, PREC_PRODUCT)?;
            write!(f, "{}", if matches!(e, Expr::Mul(..)) { "*" } else { "/" })?;
            write_at(f, b, PREC_UNARY)
        }
        Expr::Pow(a, n) => {
            write_at(f, a, PREC_ATOM)?;
            write!(f, "^{n}")
        }
        Expr::Neg(a) => {
            write!(f, "-")?;
            write_at(f, a, PREC_UNARY)
        }
        Expr::Func(func, a) => {
            write!(f, "{}(", func.name())?;
            write_expr(f, a)?;
            write!(f, ")")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse_expression(s).unwrap()
    }

    #[test]
    fn evaluates_and_differentiates() {
        let e = p("0.85*x1 + 0.04");
        assert!((e.eval(&[0.5]).unwrap() - 0.465).abs() < 1e-15);
        assert!((e.partial(1, &[0.3]).unwrap() - 0.85).abs() < 1e-15);
        assert_eq!(p("3.5").partial(1, &[0.2]).unwrap(), 0.0);
    }

    #[test]
    fn poles_and_domains() {
        assert!(matches!(p("1/(x1 - 0.5)").eval(&[0.5]), Err(Error::Pole(_))));
        assert!(matches!(p("x1^-2").eval(&[0.0]), Err(Error::Pole(_))));
        assert!(matches!(p("log(x1)").eval(&[0.0]), Err(Error::Domain(_))));
        assert!(matches!(p("x3").eval(&[0.1, 0.2]), Err(Error::UnboundVariable(3))));
        let tan_pole = std::f64::consts::FRAC_PI_2;
        assert!(matches!(Expr::func(Func::Tan, Expr::constant(tan_pole)).eval(&[]), Err(Error::Pole(_))));
        assert!(p("x1").eval_checked(&[1.5]).unwrap().out_of_domain);
        assert!(!p("x1").eval_checked(&[0.5]).unwrap().out_of_domain);
    }

    #[test]
    fn prints_negative_constants_as_negation() {
        let e = Expr::add(Expr::var(1), Expr::constant(-0.5));
        assert_eq!(e.to_string(), "x1 - 0.5");
        let e = Expr::pow(Expr::constant(-0.5), 2);
        assert_eq!(e.to_string(), "(-0.5)^2");
        assert_eq!(p(&e.to_string()).to_string(), e.to_string());
    }

    #[test]
    fn parenthesizes_by_precedence() {
        for s in ["(x1 + x2)*x3", "x1 - (x2 - x3)", "x1/(x2*x3)", "-(x1 + 1)^2", "(x1^2)^3", "x1*-x2"] {
            assert_eq!(p(s).to_string(), s);
        }
    }

    #[test]
    fn rounding_constants() {
        assert_eq!(Expr::constant_rounded(0.823456789, 4).as_const(), Some(0.8235));
        assert_eq!(Expr::constant_rounded(-1.23456e-5, 3).as_const(), Some(-1.23e-5));
        let e = Expr::add(Expr::mul(Expr::constant(0.123456), Expr::var(1)), Expr::constant(2.0 / 3.0));
        assert_eq!(e.round_constants(3).to_string(), "0.123*x1 + 0.667");
    }
}
