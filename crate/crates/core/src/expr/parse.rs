//! Recursive-descent parser for the infix expression format.
//!
//! Grammar (whitespace ignored):
//!   sum     := product (('+' | '-') product)*
//!   product := unary (('*' | '/') unary)*
//!   unary   := '-' unary | power
//!   power   := primary ('^' exponent)?
//!   exponent:= integer | '-' integer | '(' '-'? integer ')'
//!   primary := number | 'x' index | func '(' args ')' | '(' sum ')'
//!
//! A '-' directly before a numeric literal folds into a negative constant
//! unless the literal carries an exponent, so `-3^2` is `-(3^2)`.

use super::{BinaryOp, Expr, ExprError, UnaryOp};

const MAX_DEPTH: usize = 512;

pub fn parse(text: &str, n_vars: usize) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        n_vars,
        depth: 0,
    };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n_vars: usize,
    depth: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            pos: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.syntax("expression nested too deeply"));
        }
        Ok(())
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let mut lhs = self.product()?;
        loop {
            let op = if self.eat(b'+') {
                BinaryOp::Add
            } else if self.eat(b'-') {
                BinaryOp::Sub
            } else {
                break;
            };
            let rhs = self.product()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(b'*') {
                BinaryOp::Mul
            } else if self.eat(b'/') {
                BinaryOp::Div
            } else {
                break;
            };
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if !self.eat(b'-') {
            return self.power();
        }
        self.enter()?;
        let e = if self.peek().is_some_and(|c| c.is_ascii_digit() || c == b'.') {
            let c = self.number()?;
            if self.peek() == Some(b'^') {
                let k = self.exponent()?;
                Expr::unary(UnaryOp::Neg, Expr::pow(Expr::Const(c), k))
            } else {
                Expr::Const(-c)
            }
        } else {
            Expr::unary(UnaryOp::Neg, self.unary()?)
        };
        self.depth -= 1;
        Ok(e)
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            let k = self.exponent()?;
            Ok(Expr::pow(base, k))
        } else {
            Ok(base)
        }
    }

    fn exponent(&mut self) -> Result<i32, ExprError> {
        self.expect(b'^')?;
        let parens = self.eat(b'(');
        let negative = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.syntax("expected an integer exponent"));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let mut k: i32 = digits.parse().map_err(|_| ExprError::Syntax {
            pos: start,
            message: "exponent out of range".into(),
        })?;
        if negative {
            k = -k;
        }
        if parens {
            self.expect(b')')?;
        }
        Ok(k)
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        self.skip_ws();
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = mark;
                return Err(self.syntax("malformed exponent in number"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse().map_err(|_| ExprError::Syntax {
            pos: start,
            message: format!("malformed number `{text}`"),
        })
    }

    fn identifier(&mut self) -> (usize, String) {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        (start, name)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Const(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() => {
                let (start, name) = self.identifier();
                if let Some(idx) = name.strip_prefix('x').filter(|s| !s.is_empty()) {
                    return self.variable(start, &name, idx);
                }
                let op = match name.as_str() {
                    "sin" => Ok(UnaryOp::Sin),
                    "cos" => Ok(UnaryOp::Cos),
                    "exp" => Ok(UnaryOp::Exp),
                    "sqrt" => Ok(UnaryOp::Sqrt),
                    "abs" => Ok(UnaryOp::Abs),
                    "min" => Err(BinaryOp::Min),
                    "max" => Err(BinaryOp::Max),
                    _ => return Err(ExprError::UnknownIdentifier { name, pos: start }),
                };
                self.expect(b'(')?;
                let a = self.sum()?;
                let e = match op {
                    Ok(u) => Expr::unary(u, a),
                    Err(b) => {
                        self.expect(b',')?;
                        let rhs = self.sum()?;
                        Expr::binary(b, a, rhs)
                    }
                };
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) => Err(self.syntax(&format!("unexpected character `{}`", c as char))),
        }
    }

    fn variable(&self, start: usize, name: &str, idx: &str) -> Result<Expr, ExprError> {
        let unknown = || ExprError::UnknownIdentifier {
            name: name.to_string(),
            pos: start,
        };
        if !idx.bytes().all(|b| b.is_ascii_digit()) || idx.starts_with('0') {
            return Err(unknown());
        }
        let one_based: usize = idx.parse().map_err(|_| unknown())?;
        let index = one_based - 1;
        if index >= self.n_vars {
            return Err(ExprError::VarOutOfRange {
                index,
                n_vars: self.n_vars,
            });
        }
        Ok(Expr::Var(index))
    }
}
