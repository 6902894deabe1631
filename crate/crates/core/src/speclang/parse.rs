//! Recursive-descent parser for the specification language.
//!
//! ```text
//! spec    := or
//! or      := and ( "||" and )*
//! and     := not ( "&&" not )*
//! not     := "!" not | cmp
//! cmp     := sum ( (">=" | ">" | "<=" | "<") sum )?
//! sum     := prod ( ("+" | "-") prod )*
//! prod    := unary ( ("*" | "/") unary )*
//! unary   := "-" unary | atom
//! atom    := NUMBER | "mu" "(" IDENT ")" | "inv" "(" sum ")" | "(" spec ")"
//! ```
//!
//! Every comparison is rewritten into `X >= 0` form, possibly negated.

use crate::lex::{tokenize, Pos, Tok, Token};

use super::{SpecError, SpecExpr};

/// Parses one specification. The root must be a condition.
pub fn parse_spec(text: &str) -> Result<SpecExpr, SpecError> {
    let tokens: Vec<Token> = tokenize(text)
        .map_err(|e| SpecError::Parse {
            line: e.pos.line,
            col: e.pos.col,
            message: e.message,
        })?
        .into_iter()
        .filter(|t| t.tok != Tok::Newline)
        .collect();
    let mut p = Parser { tokens, at: 0 };
    let start = p.pos();
    let expr = p.or()?;
    p.expect(&Tok::Eof)?;
    if !expr.is_boolean() {
        return Err(p.error_at(start, "a specification must be a condition such as `X >= c`"));
    }
    Ok(expr)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.at].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.at].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.at].tok.clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn error_at(&self, pos: Pos, message: impl Into<String>) -> SpecError {
        SpecError::Parse {
            line: pos.line,
            col: pos.col,
            message: message.into(),
        }
    }

    fn unexpected(&self, wanted: &str) -> SpecError {
        let pos = self.pos();
        match self.peek() {
            Tok::Unknown(op) => SpecError::UnknownOperator {
                line: pos.line,
                col: pos.col,
                op: op.clone(),
            },
            tok @ (Tok::EqEq | Tok::NotEq | Tok::Assign | Tok::Tilde | Tok::Question | Tok::Colon
            | Tok::LBrace | Tok::RBrace | Tok::Semi | Tok::Comma) => SpecError::UnknownOperator {
                line: pos.line,
                col: pos.col,
                op: tok.to_string().trim_matches('`').to_string(),
            },
            tok => self.error_at(pos, format!("expected {wanted}, found {tok}")),
        }
    }

    fn expect(&mut self, tok: &Tok) -> Result<(), SpecError> {
        if self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&tok.to_string()))
        }
    }

    fn boolean(&self, e: &SpecExpr, pos: Pos, op: &str) -> Result<(), SpecError> {
        if e.is_boolean() {
            Ok(())
        } else {
            Err(self.error_at(pos, format!("operand of `{op}` must be a condition")))
        }
    }

    fn numeric(&self, e: &SpecExpr, pos: Pos, op: &str) -> Result<(), SpecError> {
        if e.is_boolean() {
            Err(self.error_at(pos, format!("operand of `{op}` must be a number, found a condition")))
        } else {
            Ok(())
        }
    }

    fn or(&mut self) -> Result<SpecExpr, SpecError> {
        let pos = self.pos();
        let mut lhs = self.and()?;
        while *self.peek() == Tok::OrOr {
            self.bump();
            let rpos = self.pos();
            let rhs = self.and()?;
            self.boolean(&lhs, pos, "||")?;
            self.boolean(&rhs, rpos, "||")?;
            lhs = SpecExpr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<SpecExpr, SpecError> {
        let pos = self.pos();
        let mut lhs = self.not()?;
        while *self.peek() == Tok::AndAnd {
            self.bump();
            let rpos = self.pos();
            let rhs = self.not()?;
            self.boolean(&lhs, pos, "&&")?;
            self.boolean(&rhs, rpos, "&&")?;
            lhs = SpecExpr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<SpecExpr, SpecError> {
        if *self.peek() == Tok::Bang {
            self.bump();
            let pos = self.pos();
            let inner = self.not()?;
            self.boolean(&inner, pos, "!")?;
            return Ok(SpecExpr::not(inner));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<SpecExpr, SpecError> {
        let pos = self.pos();
        let lhs = self.sum()?;
        let op = self.peek().clone();
        if !matches!(op, Tok::Ge | Tok::Gt | Tok::Le | Tok::Lt) {
            return Ok(lhs);
        }
        let op_text = op.to_string();
        self.bump();
        let rpos = self.pos();
        let rhs = self.sum()?;
        self.numeric(&lhs, pos, op_text.trim_matches('`'))?;
        self.numeric(&rhs, rpos, op_text.trim_matches('`'))?;
        Ok(match op {
            Tok::Ge => geq(lhs, rhs),
            Tok::Le => geq(rhs, lhs),
            Tok::Gt => SpecExpr::not(geq(rhs, lhs)),
            Tok::Lt => SpecExpr::not(geq(lhs, rhs)),
            _ => unreachable!(),
        })
    }

    fn sum(&mut self) -> Result<SpecExpr, SpecError> {
        let pos = self.pos();
        let mut lhs = self.prod()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => "+",
                Tok::Minus => "-",
                _ => return Ok(lhs),
            };
            self.bump();
            let rpos = self.pos();
            let rhs = self.prod()?;
            self.numeric(&lhs, pos, op)?;
            self.numeric(&rhs, rpos, op)?;
            lhs = if op == "+" {
                SpecExpr::sum(lhs, rhs)
            } else {
                SpecExpr::sub(lhs, rhs)
            };
        }
    }

    fn prod(&mut self) -> Result<SpecExpr, SpecError> {
        let pos = self.pos();
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => "*",
                Tok::Slash => "/",
                _ => return Ok(lhs),
            };
            self.bump();
            let rpos = self.pos();
            let rhs = self.unary()?;
            self.numeric(&lhs, pos, op)?;
            self.numeric(&rhs, rpos, op)?;
            lhs = if op == "*" {
                SpecExpr::prod(lhs, rhs)
            } else {
                SpecExpr::div(lhs, rhs)
            };
        }
    }

    fn unary(&mut self) -> Result<SpecExpr, SpecError> {
        if *self.peek() != Tok::Minus {
            return self.atom();
        }
        self.bump();
        // `-` directly before a literal is a negative constant.
        if let Tok::Num(v) = *self.peek() {
            self.bump();
            return Ok(SpecExpr::Const(-v));
        }
        let pos = self.pos();
        let inner = self.unary()?;
        self.numeric(&inner, pos, "-")?;
        Ok(SpecExpr::neg(inner))
    }

    fn atom(&mut self) -> Result<SpecExpr, SpecError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(SpecExpr::Const(v))
            }
            Tok::Ident(name) if name == "mu" => {
                self.bump();
                self.expect(&Tok::LParen)?;
                let var_pos = self.pos();
                let var = match self.bump() {
                    Tok::Ident(v) => v,
                    _ => return Err(self.error_at(var_pos, "`mu(...)` takes a variable name")),
                };
                self.expect(&Tok::RParen)?;
                Ok(SpecExpr::Mu(var))
            }
            Tok::Ident(name) if name == "inv" => {
                self.bump();
                self.expect(&Tok::LParen)?;
                let ipos = self.pos();
                let inner = self.sum()?;
                self.numeric(&inner, ipos, "inv")?;
                self.expect(&Tok::RParen)?;
                Ok(SpecExpr::inv(inner))
            }
            Tok::Ident(name) => Err(self.error_at(
                pos,
                format!("unknown name `{name}`; variables are written `mu({name})`"),
            )),
            Tok::LParen => {
                self.bump();
                let inner = self.or()?;
                self.expect(&Tok::RParen)?;
                Ok(inner)
            }
            _ => Err(self.unexpected("a number, `mu(...)` or `(`")),
        }
    }
}

fn geq(lhs: SpecExpr, rhs: SpecExpr) -> SpecExpr {
    SpecExpr::geq(lhs, rhs)
}
