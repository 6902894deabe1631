//! Expressions shared by model statements and conditioning predicates.
//! Booleans are represented as `1.0` / `0.0`; any nonzero value is true.

use crate::lex::{Pos, Tok, Token};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cond(Box<Expr>, Box<Expr>, Box<Expr>),
}

#[inline]
fn truth(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Expr {
    pub(crate) fn eval(&self, env: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(slot) => env[*slot],
            Expr::Neg(a) => -a.eval(env),
            Expr::Not(a) => truth(a.eval(env) == 0.0),
            Expr::Bin(op, a, b) => {
                let x = a.eval(env);
                match op {
                    BinOp::And => return truth(x != 0.0 && b.eval(env) != 0.0),
                    BinOp::Or => return truth(x != 0.0 || b.eval(env) != 0.0),
                    _ => {}
                }
                let y = b.eval(env);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Eq => truth(x == y),
                    BinOp::Ne => truth(x != y),
                    BinOp::Lt => truth(x < y),
                    BinOp::Le => truth(x <= y),
                    BinOp::Gt => truth(x > y),
                    BinOp::Ge => truth(x >= y),
                    BinOp::And | BinOp::Or => unreachable!(),
                }
            }
            Expr::Cond(c, a, b) => {
                if c.eval(env) != 0.0 {
                    a.eval(env)
                } else {
                    b.eval(env)
                }
            }
        }
    }

    /// Value of a variable-free expression.
    pub(crate) fn constant(&self) -> Option<f64> {
        if self.mentions_any() {
            None
        } else {
            Some(self.eval(&[]))
        }
    }

    fn mentions_any(&self) -> bool {
        let mut found = false;
        self.visit_vars(&mut |_| found = true);
        found
    }

    pub(crate) fn visit_vars(&self, f: &mut impl FnMut(usize)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(s) => f(*s),
            Expr::Neg(a) | Expr::Not(a) => a.visit_vars(f),
            Expr::Bin(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
            Expr::Cond(c, a, b) => {
                c.visit_vars(f);
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }
}

/// Token cursor used by both the statement parser and predicate parsing.
pub(crate) struct Cursor {
    tokens: Vec<Token>,
    at: usize,
}

impl Cursor {
    pub(crate) fn new(tokens: Vec<Token>) -> Self {
        let tokens = tokens.into_iter().filter(|t| t.tok != Tok::Newline).collect();
        Cursor { tokens, at: 0 }
    }

    pub(crate) fn peek(&self) -> &Tok {
        &self.tokens[self.at].tok
    }

    pub(crate) fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.at + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    pub(crate) fn pos(&self) -> Pos {
        self.tokens[self.at].pos
    }

    pub(crate) fn bump(&mut self) -> Tok {
        let t = self.tokens[self.at].tok.clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    pub(crate) fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> ModelError {
        let pos = self.pos();
        ModelError::Parse {
            line: pos.line,
            col: pos.col,
            message: message.into(),
        }
    }

    pub(crate) fn expect(&mut self, tok: &Tok) -> Result<(), ModelError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.error(format!("expected {tok}, found {}", self.peek())))
        }
    }

    pub(crate) fn ident(&mut self, what: &str) -> Result<String, ModelError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            other => Err(self.error(format!("expected {what}, found {other}"))),
        }
    }

    /// Parses an expression; `resolve` maps a variable name to its slot.
    pub(crate) fn expr(
        &mut self,
        resolve: &mut dyn FnMut(&str, Pos) -> Result<usize, ModelError>,
    ) -> Result<Expr, ModelError> {
        let c = self.or(resolve)?;
        if self.eat(&Tok::Question) {
            let a = self.expr(resolve)?;
            self.expect(&Tok::Colon)?;
            let b = self.expr(resolve)?;
            return Ok(Expr::Cond(Box::new(c), Box::new(a), Box::new(b)));
        }
        Ok(c)
    }

    fn or(&mut self, resolve: &mut dyn FnMut(&str, Pos) -> Result<usize, ModelError>) -> Result<Expr, ModelError> {
        let mut lhs = self.and(resolve)?;
        while self.eat(&Tok::OrOr) {
            let rhs = self.and(resolve)?;
            lhs = Expr::Bin(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self, resolve: &mut dyn FnMut(&str, Pos) -> Result<usize, ModelError>) -> Result<Expr, ModelError> {
        let mut lhs = self.cmp(resolve)?;
        while self.eat(&Tok::AndAnd) {
            let rhs = self.cmp(resolve)?;
            lhs = Expr::Bin(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn cmp(&mut self, resolve: &mut dyn FnMut(&str, Pos) -> Result<usize, ModelError>) -> Result<Expr, ModelError> {
        let lhs = self.add(resolve)?;
        let op = match self.peek() {
            Tok::EqEq => BinOp::Eq,
            Tok::NotEq => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add(resolve)?;
        Ok(Expr::Bin(op, Box::new(lhs), Box::new(rhs)))
    }

    fn add(&mut self, resolve: &mut dyn FnMut(&str, Pos) -> Result<usize, ModelError>) -> Result<Expr, ModelError> {
        let mut lhs = self.mul(resolve)?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul(resolve)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul(&mut self, resolve: &mut dyn FnMut(&str, Pos) -> Result<usize, ModelError>) -> Result<Expr, ModelError> {
        let mut lhs = self.unary(resolve)?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary(resolve)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self, resolve: &mut dyn FnMut(&str, Pos) -> Result<usize, ModelError>) -> Result<Expr, ModelError> {
        if self.eat(&Tok::Minus) {
            return Ok(match self.unary(resolve)? {
                Expr::Num(v) => Expr::Num(-v),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat(&Tok::Bang) {
            return Ok(Expr::Not(Box::new(self.unary(resolve)?)));
        }
        self.atom(resolve)
    }

    fn atom(&mut self, resolve: &mut dyn FnMut(&str, Pos) -> Result<usize, ModelError>) -> Result<Expr, ModelError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::Ident(name) if name == "true" => {
                self.bump();
                Ok(Expr::Num(1.0))
            }
            Tok::Ident(name) if name == "false" => {
                self.bump();
                Ok(Expr::Num(0.0))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(Expr::Var(resolve(&name, pos)?))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr(resolve)?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            other => Err(self.error(format!("expected an expression, found {other}"))),
        }
    }
}
