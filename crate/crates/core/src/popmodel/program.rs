//! Statement language for population models.
//!
//! ```text
//! program := stmt*
//! stmt    := IDENT "~" dist
//!          | IDENT "=" expr
//!          | "if" expr block ( "else" ( block | if-stmt ) )?
//!          | "mediator" block                # top level, at most once
//!          | "return" IDENT ( "," IDENT )*
//! block   := "{" stmt* "}"
//! dist    := "bernoulli" "(" expr ")"
//!          | ("gaussian" | "normal") "(" expr "," expr ")"
//!          | "uniform" "(" expr "," expr ")"
//!          | "categorical" "(" expr ( "," expr )* ")"
//! ```
//!
//! Newlines and `;` are optional separators. Programs are loop-free and every
//! path must end in a `return` of the same feature names.

use std::collections::{BTreeSet, HashMap};

use crate::lex::{tokenize, Pos, Tok};

use super::expr::{Cursor, Expr};
use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Dist {
    Bernoulli(Expr),
    Gaussian(Expr, Expr),
    Uniform(Expr, Expr),
    Categorical(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Stmt {
    Draw(usize, Dist),
    Assign(usize, Expr),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
    Mediator(Vec<Stmt>),
    /// Slots of the returned features, in schema order.
    Return(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Program {
    pub(crate) body: Vec<Stmt>,
    /// Variable name per slot.
    pub(crate) slots: Vec<String>,
    /// Returned feature names.
    pub(crate) schema: Vec<String>,
    /// Slots assigned inside the mediator block, if there is one.
    pub(crate) mediator_slots: Option<Vec<usize>>,
}

/// Source of randomness for the interpreter. Parameters are validated
/// before these are called.
pub(crate) trait Source {
    fn bernoulli(&mut self, p: f64) -> Result<f64, ModelError>;
    fn gaussian(&mut self, slot: usize, mean: f64, stddev: f64) -> Result<f64, ModelError>;
    fn uniform(&mut self, slot: usize, lo: f64, hi: f64) -> Result<f64, ModelError>;
    fn categorical(&mut self, weights: &[f64]) -> Result<f64, ModelError>;
}

pub(crate) fn check_bernoulli(p: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter(format!("bernoulli probability {p} is outside [0, 1]")))
    }
}

pub(crate) fn check_gaussian(mean: f64, stddev: f64) -> Result<(), ModelError> {
    if mean.is_finite() && stddev.is_finite() && stddev > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter(format!(
            "gaussian({mean}, {stddev}) needs a finite mean and stddev > 0"
        )))
    }
}

pub(crate) fn check_uniform(lo: f64, hi: f64) -> Result<(), ModelError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter(format!("uniform({lo}, {hi}) needs finite lo < hi")))
    }
}

pub(crate) fn check_categorical(weights: &[f64]) -> Result<(), ModelError> {
    if weights.iter().all(|w| w.is_finite() && *w >= 0.0) && weights.iter().any(|w| *w > 0.0) {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter(format!(
            "categorical weights {weights:?} must be nonnegative and not all zero"
        )))
    }
}

impl Program {
    pub(crate) fn parse(src: &str) -> Result<Program, ModelError> {
        let tokens = tokenize(src).map_err(|e| ModelError::Parse {
            line: e.pos.line,
            col: e.pos.col,
            message: e.message,
        })?;
        let mut p = StmtParser {
            cur: Cursor::new(tokens),
            slots: Vec::new(),
            index: HashMap::new(),
            schema: None,
        };
        let body = p.block_body(true)?;
        if *p.cur.peek() != Tok::Eof {
            return Err(p.cur.error(format!("unexpected {}", p.cur.peek())));
        }
        let schema = p
            .schema
            .ok_or_else(|| ModelError::Parse { line: 1, col: 1, message: "model has no `return`".into() })?;
        let mut program = Program {
            body,
            slots: p.slots,
            schema,
            mediator_slots: None,
        };
        program.check()?;
        Ok(program)
    }

    /// Totality, definite assignment, mediator placement.
    fn check(&mut self) -> Result<(), ModelError> {
        let mut assigned = BTreeSet::new();
        let mut mediators = 0usize;
        let returns = check_block(&self.body, &mut assigned, &self.slots, true, &mut mediators)?;
        if !returns {
            return Err(ModelError::NotTotal("some execution path does not reach `return`".into()));
        }
        if mediators > 1 {
            return Err(ModelError::NotTotal("at most one `mediator` block is allowed".into()));
        }
        for (i, stmt) in self.body.iter().enumerate() {
            if let Stmt::Mediator(block) = stmt {
                let mut slots = BTreeSet::new();
                assigned_slots(block, &mut slots);
                // Only the block is re-run under an override, so later
                // statements must not derive values from it.
                let mut stale = None;
                block_reads(&self.body[i + 1..], &mut |s| {
                    if slots.contains(&s) && stale.is_none() {
                        stale = Some(s);
                    }
                });
                if let Some(s) = stale {
                    return Err(ModelError::MediatorDependency(self.slots[s].clone()));
                }
                self.mediator_slots = Some(slots.into_iter().collect());
            }
        }
        Ok(())
    }
}

fn assigned_slots(block: &[Stmt], out: &mut BTreeSet<usize>) {
    for stmt in block {
        match stmt {
            Stmt::Draw(s, _) | Stmt::Assign(s, _) => {
                out.insert(*s);
            }
            Stmt::If(_, a, b) => {
                assigned_slots(a, out);
                assigned_slots(b, out);
            }
            Stmt::Mediator(b) => assigned_slots(b, out),
            Stmt::Return(_) => {}
        }
    }
}

fn dist_exprs(d: &Dist) -> Vec<&Expr> {
    match d {
        Dist::Bernoulli(p) => vec![p],
        Dist::Gaussian(a, b) | Dist::Uniform(a, b) => vec![a, b],
        Dist::Categorical(ws) => ws.iter().collect(),
    }
}

fn check_uses(e: &Expr, assigned: &BTreeSet<usize>, slots: &[String]) -> Result<(), ModelError> {
    let mut missing = None;
    e.visit_vars(&mut |s| {
        if !assigned.contains(&s) && missing.is_none() {
            missing = Some(s);
        }
    });
    match missing {
        Some(s) => Err(ModelError::UnassignedVariable(slots[s].clone())),
        None => Ok(()),
    }
}

/// Returns whether every path through `block` reaches `return`.
fn check_block(
    block: &[Stmt],
    assigned: &mut BTreeSet<usize>,
    slots: &[String],
    top: bool,
    mediators: &mut usize,
) -> Result<bool, ModelError> {
    for (i, stmt) in block.iter().enumerate() {
        let returns = match stmt {
            Stmt::Draw(s, d) => {
                for e in dist_exprs(d) {
                    check_uses(e, assigned, slots)?;
                }
                assigned.insert(*s);
                false
            }
            Stmt::Assign(s, e) => {
                check_uses(e, assigned, slots)?;
                assigned.insert(*s);
                false
            }
            Stmt::If(c, a, b) => {
                check_uses(c, assigned, slots)?;
                let mut in_a = assigned.clone();
                let mut in_b = assigned.clone();
                let ra = check_block(a, &mut in_a, slots, false, mediators)?;
                let rb = check_block(b, &mut in_b, slots, false, mediators)?;
                *assigned = match (ra, rb) {
                    (true, true) => in_a.union(&in_b).copied().collect(),
                    (true, false) => in_b,
                    (false, true) => in_a,
                    (false, false) => in_a.intersection(&in_b).copied().collect(),
                };
                ra && rb
            }
            Stmt::Mediator(b) => {
                if !top {
                    return Err(ModelError::NotTotal("`mediator` blocks must be at the top level".into()));
                }
                *mediators += 1;
                let mut inner = 0usize;
                if check_block(b, assigned, slots, false, &mut inner)? || contains_return(b) {
                    return Err(ModelError::NotTotal("`return` inside a `mediator` block".into()));
                }
                false
            }
            Stmt::Return(fields) => {
                for s in fields {
                    if !assigned.contains(s) {
                        return Err(ModelError::UnassignedVariable(slots[*s].clone()));
                    }
                }
                true
            }
        };
        if returns {
            if i + 1 != block.len() {
                return Err(ModelError::NotTotal("statements after `return` are unreachable".into()));
            }
            return Ok(true);
        }
    }
    Ok(false)
}

fn contains_return(block: &[Stmt]) -> bool {
    block.iter().any(|s| match s {
        Stmt::Return(_) => true,
        Stmt::If(_, a, b) => contains_return(a) || contains_return(b),
        Stmt::Mediator(b) => contains_return(b),
        _ => false,
    })
}

struct StmtParser {
    cur: Cursor,
    slots: Vec<String>,
    index: HashMap<String, usize>,
    schema: Option<Vec<String>>,
}

const KEYWORDS: &[&str] = &["if", "else", "mediator", "return", "true", "false"];

impl StmtParser {
    fn slot(&mut self, name: &str) -> usize {
        if let Some(&s) = self.index.get(name) {
            return s;
        }
        self.slots.push(name.to_string());
        self.index.insert(name.to_string(), self.slots.len() - 1);
        self.slots.len() - 1
    }

    fn expr(&mut self) -> Result<Expr, ModelError> {
        let index = &self.index;
        let mut resolve = |name: &str, pos: Pos| {
            index.get(name).copied().ok_or_else(|| ModelError::Parse {
                line: pos.line,
                col: pos.col,
                message: format!("`{name}` is used before it is assigned"),
            })
        };
        self.cur.expr(&mut resolve)
    }

    fn block_body(&mut self, top: bool) -> Result<Vec<Stmt>, ModelError> {
        let mut out = Vec::new();
        loop {
            while self.cur.eat(&Tok::Semi) {}
            match self.cur.peek() {
                Tok::Eof if top => return Ok(out),
                Tok::RBrace if !top => return Ok(out),
                Tok::Eof => return Err(self.cur.error("unclosed `{`")),
                _ => out.push(self.stmt()?),
            }
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ModelError> {
        self.cur.expect(&Tok::LBrace)?;
        let body = self.block_body(false)?;
        self.cur.expect(&Tok::RBrace)?;
        Ok(body)
    }

    fn stmt(&mut self) -> Result<Stmt, ModelError> {
        let name = match self.cur.peek().clone() {
            Tok::Ident(name) => name,
            other => return Err(self.cur.error(format!("expected a statement, found {other}"))),
        };
        match name.as_str() {
            "if" => self.if_stmt(),
            "mediator" if *self.cur.peek_at(1) == Tok::LBrace => {
                self.cur.bump();
                Ok(Stmt::Mediator(self.block()?))
            }
            "return" => {
                self.cur.bump();
                self.return_stmt()
            }
            _ => {
                if KEYWORDS.contains(&name.as_str()) {
                    return Err(self.cur.error(format!("unexpected keyword `{name}`")));
                }
                self.cur.bump();
                match self.cur.bump() {
                    Tok::Tilde => {
                        let dist = self.dist()?;
                        let slot = self.slot(&name);
                        Ok(Stmt::Draw(slot, dist))
                    }
                    Tok::Assign => {
                        let e = self.expr()?;
                        let slot = self.slot(&name);
                        Ok(Stmt::Assign(slot, e))
                    }
                    other => Err(self.cur.error(format!("expected `~` or `=` after `{name}`, found {other}"))),
                }
            }
        }
    }

    fn if_stmt(&mut self) -> Result<Stmt, ModelError> {
        self.cur.bump();
        let cond = self.expr()?;
        let then = self.block()?;
        let els = if self.cur.peek() == &Tok::Ident("else".into()) {
            self.cur.bump();
            if self.cur.peek() == &Tok::Ident("if".into()) {
                vec![self.if_stmt()?]
            } else {
                self.block()?
            }
        } else {
            Vec::new()
        };
        Ok(Stmt::If(cond, then, els))
    }

    fn return_stmt(&mut self) -> Result<Stmt, ModelError> {
        let pos = self.cur.pos();
        let mut names = vec![self.cur.ident("a feature name")?];
        while self.cur.eat(&Tok::Comma) {
            names.push(self.cur.ident("a feature name")?);
        }
        let mut uniq = names.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != names.len() {
            return Err(self.cur.error("duplicate feature in `return`"));
        }
        match &self.schema {
            None => self.schema = Some(names.clone()),
            Some(schema) => {
                let mut want = schema.clone();
                want.sort();
                if want != uniq {
                    return Err(ModelError::Parse {
                        line: pos.line,
                        col: pos.col,
                        message: format!("every `return` must list the same features as the first: {schema:?}"),
                    });
                }
            }
        }
        let schema = self.schema.clone().unwrap_or_default();
        let mut slots = Vec::with_capacity(schema.len());
        for field in &schema {
            match self.index.get(field) {
                Some(&s) => slots.push(s),
                None => return Err(ModelError::UnassignedVariable(field.clone())),
            }
        }
        Ok(Stmt::Return(slots))
    }

    fn dist(&mut self) -> Result<Dist, ModelError> {
        let pos = self.cur.pos();
        let kind = self.cur.ident("a distribution")?;
        self.cur.expect(&Tok::LParen)?;
        let mut args = vec![self.expr()?];
        while self.cur.eat(&Tok::Comma) {
            args.push(self.expr()?);
        }
        self.cur.expect(&Tok::RParen)?;
        let arity = |n: usize| -> Result<(), ModelError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(ModelError::Parse {
                    line: pos.line,
                    col: pos.col,
                    message: format!("`{kind}` takes {n} argument(s), got {}", args.len()),
                })
            }
        };
        let consts: Option<Vec<f64>> = args.iter().map(Expr::constant).collect();
        let dist = match kind.as_str() {
            "bernoulli" => {
                arity(1)?;
                if let Some(c) = &consts {
                    check_bernoulli(c[0])?;
                }
                Dist::Bernoulli(args.remove(0))
            }
            "gaussian" | "normal" => {
                arity(2)?;
                if let Some(c) = &consts {
                    check_gaussian(c[0], c[1])?;
                }
                let sd = args.pop().unwrap();
                Dist::Gaussian(args.pop().unwrap(), sd)
            }
            "uniform" => {
                arity(2)?;
                if let Some(c) = &consts {
                    check_uniform(c[0], c[1])?;
                }
                let hi = args.pop().unwrap();
                Dist::Uniform(args.pop().unwrap(), hi)
            }
            "categorical" => {
                if let Some(c) = &consts {
                    check_categorical(c)?;
                }
                Dist::Categorical(args)
            }
            other => {
                return Err(ModelError::Parse {
                    line: pos.line,
                    col: pos.col,
                    message: format!("unknown distribution `{other}`"),
                })
            }
        };
        Ok(dist)
    }
}

/// Outcome of running a program once.
pub(crate) struct Run {
    pub(crate) values: Vec<f64>,
    /// Locals on entry to the mediator block, when requested and reached.
    pub(crate) mediator_entry: Option<Vec<f64>>,
}

impl Program {
    pub(crate) fn run(&self, src: &mut dyn Source, capture_mediator: bool) -> Result<Run, ModelError> {
        let mut env = vec![f64::NAN; self.slots.len()];
        let mut entry = None;
        let ret = self.exec(&self.body, &mut env, src, capture_mediator.then_some(&mut entry))?;
        let slots = ret.expect("checked: every path returns");
        Ok(Run {
            values: slots.iter().map(|&s| env[s]).collect(),
            mediator_entry: entry,
        })
    }

    /// Re-executes only the mediator block from saved locals, with some
    /// locals overridden. Returns the locals after the block.
    pub(crate) fn rerun_mediator(
        &self,
        entry: &[f64],
        overrides: &[(usize, f64)],
        src: &mut dyn Source,
    ) -> Result<Vec<f64>, ModelError> {
        let block = self
            .body
            .iter()
            .find_map(|s| match s {
                Stmt::Mediator(b) => Some(b),
                _ => None,
            })
            .ok_or(ModelError::NoMediatorBlock)?;
        let mut env = entry.to_vec();
        for &(slot, v) in overrides {
            env[slot] = v;
        }
        self.exec(block, &mut env, src, None)?;
        Ok(env)
    }

    fn exec<'a>(
        &'a self,
        block: &'a [Stmt],
        env: &mut Vec<f64>,
        src: &mut dyn Source,
        mut capture: Option<&mut Option<Vec<f64>>>,
    ) -> Result<Option<&'a [usize]>, ModelError> {
        for stmt in block {
            match stmt {
                Stmt::Draw(slot, dist) => {
                    env[*slot] = draw(dist, *slot, env, src)?;
                }
                Stmt::Assign(slot, e) => env[*slot] = e.eval(env),
                Stmt::If(c, a, b) => {
                    let branch = if c.eval(env) != 0.0 { a } else { b };
                    if let Some(r) = self.exec(branch, env, src, capture.as_deref_mut())? {
                        return Ok(Some(r));
                    }
                }
                Stmt::Mediator(b) => {
                    if let Some(slot) = capture.as_deref_mut() {
                        *slot = Some(env.clone());
                    }
                    self.exec(b, env, src, None)?;
                }
                Stmt::Return(slots) => return Ok(Some(slots)),
            }
        }
        Ok(None)
    }
}

impl Program {
    /// Slots drawn from a gaussian or uniform anywhere in the program.
    pub(crate) fn continuous_slots(&self) -> BTreeSet<usize> {
        fn walk(block: &[Stmt], out: &mut BTreeSet<usize>) {
            for stmt in block {
                match stmt {
                    Stmt::Draw(slot, Dist::Gaussian(..) | Dist::Uniform(..)) => {
                        out.insert(*slot);
                    }
                    Stmt::If(_, a, b) => {
                        walk(a, out);
                        walk(b, out);
                    }
                    Stmt::Mediator(b) => walk(b, out),
                    _ => {}
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.body, &mut out);
        out
    }

    /// Every slot read by some expression (parameters, assignments, conditions).
    pub(crate) fn slots_read(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        block_reads(&self.body, &mut |s| {
            out.insert(s);
        });
        out
    }
}

fn block_reads(block: &[Stmt], f: &mut impl FnMut(usize)) {
    for stmt in block {
        match stmt {
            Stmt::Draw(_, d) => dist_exprs(d).into_iter().for_each(|e| e.visit_vars(f)),
            Stmt::Assign(_, e) => e.visit_vars(f),
            Stmt::If(c, a, b) => {
                c.visit_vars(f);
                block_reads(a, f);
                block_reads(b, f);
            }
            Stmt::Mediator(b) => block_reads(b, f),
            Stmt::Return(_) => {}
        }
    }
}

fn draw(dist: &Dist, slot: usize, env: &[f64], src: &mut dyn Source) -> Result<f64, ModelError> {
    match dist {
        Dist::Bernoulli(p) => {
            let p = p.eval(env);
            check_bernoulli(p)?;
            src.bernoulli(p)
        }
        Dist::Gaussian(m, s) => {
            let (m, s) = (m.eval(env), s.eval(env));
            check_gaussian(m, s)?;
            src.gaussian(slot, m, s)
        }
        Dist::Uniform(lo, hi) => {
            let (lo, hi) = (lo.eval(env), hi.eval(env));
            check_uniform(lo, hi)?;
            src.uniform(slot, lo, hi)
        }
        Dist::Categorical(ws) => {
            let ws: Vec<f64> = ws.iter().map(|w| w.eval(env)).collect();
            check_categorical(&ws)?;
            src.categorical(&ws)
        }
    }
}
