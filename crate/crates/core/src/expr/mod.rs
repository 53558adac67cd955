//! Scalar expression trees over the state variables.
//!
//! A single [`Expr`] drives point evaluation, forward-mode gradients, and
//! natural interval extension, so sampled and certified constants always
//! see the same function.

pub mod interval;
mod number;
mod parse;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use interval::Interval;
pub use parse::parse;

use number::{Dual, Number};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

/// Expression node. Variable indices are 0-based; the text form is 1-based.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("variable x{} out of range (model has {n_vars} variables)", index + 1)]
    VarOutOfRange { index: usize, n_vars: usize },
    #[error("domain violation in `{node}`: {reason}")]
    Domain { node: String, reason: &'static str },
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(index: usize) -> Expr {
        Expr::Var(index)
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }

    /// Builds a binary node; a product of two identical subtrees becomes a square.
    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        if op == BinaryOp::Mul && a == b {
            return Expr::Pow(Box::new(a), 2);
        }
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn pow(e: Expr, k: i32) -> Expr {
        Expr::Pow(Box::new(e), k)
    }

    /// One past the largest variable index used, or 0 for a constant tree.
    pub fn var_span(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Unary(_, e) | Expr::Pow(e, _) => e.var_span(),
            Expr::Binary(_, a, b) => a.var_span().max(b.var_span()),
        }
    }

    /// Sorted, deduplicated variable indices appearing in the tree.
    pub fn vars(&self) -> Vec<usize> {
        fn collect(e: &Expr, out: &mut Vec<usize>) {
            match e {
                Expr::Const(_) => {}
                Expr::Var(i) => out.push(*i),
                Expr::Unary(_, a) | Expr::Pow(a, _) => collect(a, out),
                Expr::Binary(_, a, b) => {
                    collect(a, out);
                    collect(b, out);
                }
            }
        }
        let mut out = Vec::new();
        collect(self, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn check_vars(&self, n_vars: usize) -> Result<(), ExprError> {
        let span = self.var_span();
        if span > n_vars {
            Err(ExprError::VarOutOfRange {
                index: span - 1,
                n_vars,
            })
        } else {
            Ok(())
        }
    }

    /// True if the tree contains abs, min, or max (not continuously differentiable).
    pub fn is_nonsmooth(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Unary(UnaryOp::Abs, _) => true,
            Expr::Unary(_, e) | Expr::Pow(e, _) => e.is_nonsmooth(),
            Expr::Binary(BinaryOp::Min | BinaryOp::Max, _, _) => true,
            Expr::Binary(_, a, b) => a.is_nonsmooth() || b.is_nonsmooth(),
        }
    }

    /// Total degree if the tree is a polynomial, `None` otherwise.
    /// Division by a constant subtree keeps a polynomial a polynomial.
    pub fn polynomial_degree(&self) -> Option<u32> {
        match self {
            Expr::Const(_) => Some(0),
            Expr::Var(_) => Some(1),
            Expr::Unary(UnaryOp::Neg, e) => e.polynomial_degree(),
            Expr::Unary(_, e) => (e.polynomial_degree()? == 0).then_some(0),
            Expr::Pow(e, k) => {
                let d = e.polynomial_degree()?;
                if *k >= 0 {
                    Some(d * k.unsigned_abs())
                } else {
                    (d == 0).then_some(0)
                }
            }
            Expr::Binary(op, a, b) => {
                let (da, db) = (a.polynomial_degree()?, b.polynomial_degree()?);
                match op {
                    BinaryOp::Add | BinaryOp::Sub => Some(da.max(db)),
                    BinaryOp::Mul => Some(da + db),
                    BinaryOp::Div => (db == 0).then_some(da),
                    BinaryOp::Min | BinaryOp::Max => (da == 0 && db == 0).then_some(0),
                }
            }
        }
    }

    fn walk<N: Number>(&self, vars: &[N], n: usize) -> Result<N, ExprError> {
        let domain = |reason| ExprError::Domain {
            node: self.to_string(),
            reason,
        };
        Ok(match self {
            Expr::Const(c) => N::constant(*c, n),
            Expr::Var(i) => vars
                .get(*i)
                .cloned()
                .ok_or(ExprError::VarOutOfRange {
                    index: *i,
                    n_vars: vars.len(),
                })?,
            Expr::Unary(op, e) => {
                let v = e.walk(vars, n)?;
                match op {
                    UnaryOp::Neg => v.neg(),
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Sqrt => v.sqrt().ok_or_else(|| domain("sqrt of a negative value"))?,
                    UnaryOp::Abs => v.abs(),
                }
            }
            Expr::Binary(op, a, b) => {
                let (x, y) = (a.walk(vars, n)?, b.walk(vars, n)?);
                match op {
                    BinaryOp::Add => x.add(&y),
                    BinaryOp::Sub => x.sub(&y),
                    BinaryOp::Mul => x.mul(&y),
                    BinaryOp::Div => x.div(&y).ok_or_else(|| domain("division by zero"))?,
                    BinaryOp::Min => x.min(&y),
                    BinaryOp::Max => x.max(&y),
                }
            }
            Expr::Pow(e, k) => e
                .walk(vars, n)?
                .powi(*k)
                .ok_or_else(|| domain("negative power of zero"))?,
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.walk(x, x.len())
    }

    /// Natural interval extension with the tightened even-power rule.
    pub fn ieval(&self, bx: &[Interval]) -> Result<Interval, ExprError> {
        self.walk(bx, bx.len())
    }

    /// Value and gradient by forward-mode duals, one vectorized pass.
    /// At kinks: abs'(0) = 1, and min/max follow the first argument on ties.
    pub fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ExprError> {
        let n = x.len();
        let vars: Vec<Dual<f64>> = (0..n).map(|i| Dual::variable(i, &x[i], n)).collect();
        let d = self.walk(&vars, n)?;
        Ok((d.value, d.grad))
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        Ok(self.value_grad(x)?.1)
    }

    /// Enclosure of every partial derivative over the box.
    pub fn igrad(&self, bx: &[Interval]) -> Result<Vec<Interval>, ExprError> {
        let n = bx.len();
        let vars: Vec<Dual<Interval>> = (0..n).map(|i| Dual::variable(i, &bx[i], n)).collect();
        Ok(self.walk(&vars, n)?.grad)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, _, _) => 1,
            Expr::Binary(BinaryOp::Mul | BinaryOp::Div, _, _) => 2,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Pow(_, _) => 4,
            _ => 5,
        }
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "({c})")
    } else {
        write!(f, "{c}")
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Unparse with minimal parentheses; the output reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_const(f, *c),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Unary(UnaryOp::Neg, e) => {
                // A bare literal after '-' would fold into a negative constant.
                let parens = e.precedence() < 3 || matches!(**e, Expr::Const(c) if c >= 0.0);
                f.write_str("-")?;
                write_child(f, e, parens)
            }
            Expr::Unary(op, e) => {
                let name = match op {
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Abs => "abs",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({e})")
            }
            Expr::Binary(op @ (BinaryOp::Min | BinaryOp::Max), a, b) => {
                let name = if *op == BinaryOp::Min { "min" } else { "max" };
                write!(f, "{name}({a}, {b})")
            }
            Expr::Binary(op, a, b) => {
                let p = self.precedence();
                write_child(f, a, a.precedence() < p)?;
                let sym = match op {
                    BinaryOp::Add => " + ",
                    BinaryOp::Sub => " - ",
                    BinaryOp::Mul => "*",
                    BinaryOp::Div => "/",
                    _ => unreachable!(),
                };
                f.write_str(sym)?;
                write_child(f, b, b.precedence() <= p)
            }
            Expr::Pow(e, k) => {
                write_child(f, e, e.precedence() < 5)?;
                if *k < 0 {
                    write!(f, "^({k})")
                } else {
                    write!(f, "^{k}")
                }
            }
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Deserializes without a variable bound; callers check `var_span` afterwards.
impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse(&text, usize::MAX).map_err(serde::de::Error::custom)
    }
}
