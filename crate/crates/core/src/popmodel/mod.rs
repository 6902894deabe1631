//! Population models: small loop-free probabilistic programs that return a
//! random member of the population as a [`FeatureRecord`].
//!
//! ```text
//! is_male ~ bernoulli(0.5)
//! col_rank ~ gaussian(25, 10)
//! if is_male { years_exp ~ gaussian(15, 5) } else { years_exp ~ gaussian(10, 5) }
//! return is_male, col_rank, years_exp
//! ```
//!
//! Conditional distributions are sampled by rejection. A `mediator { ... }`
//! block marks statements that can be re-run with the sensitive attribute
//! overridden, for path-specific causal properties.

mod expr;
pub(crate) mod program;
mod rng;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::lex::tokenize;
use expr::{Cursor, Expr};
pub(crate) use program::Source;
use program::Program;

pub use rng::RngStream;

/// Default rejection budget per requested sample.
pub const DEFAULT_MAX_ATTEMPTS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parse error at {line}:{col}: {message}")]
    Parse { line: usize, col: usize, message: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model is not total: {0}")]
    NotTotal(String),
    #[error("variable `{0}` may be used before it is assigned")]
    UnassignedVariable(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("model has no mediator block")]
    NoMediatorBlock,
    #[error("`{0}` is assigned in the mediator block but read after it")]
    MediatorDependency(String),
    #[error("conditioning predicate not satisfied after {attempts} attempts")]
    RejectionExhausted { attempts: u64 },
}

/// One population member: feature name to value. Booleans are stored as
/// `1.0` / `0.0`; categorical draws as their index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    names: Arc<[String]>,
    values: Vec<f64>,
}

impl FeatureRecord {
    pub fn new(names: Arc<[String]>, values: Vec<f64>) -> Self {
        assert_eq!(names.len(), values.len());
        FeatureRecord { names, values }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        let (names, values): (Vec<String>, Vec<f64>) =
            pairs.into_iter().map(|(k, v)| (k.to_string(), v)).unzip();
        FeatureRecord::new(names.into(), values)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }

    /// L1 distance over the features of `self`.
    pub fn l1_distance(&self, other: &FeatureRecord) -> f64 {
        self.iter()
            .map(|(k, v)| (v - other.get(k).unwrap_or(f64::NAN)).abs())
            .sum()
    }
}

impl fmt::Display for FeatureRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// A sampled record together with the number of draws rejection took.
#[derive(Debug, Clone, PartialEq)]
pub struct Accepted {
    pub record: FeatureRecord,
    pub attempts: u64,
}

/// A boolean condition on a model's returned features.
#[derive(Clone)]
pub enum Predicate {
    Always,
    Expr {
        source: String,
        expr: Arc<ExprPredicate>,
    },
    Custom(Arc<dyn Fn(&FeatureRecord) -> bool + Send + Sync>),
    And(Box<Predicate>, Box<Predicate>),
}

/// Compiled expression over feature positions.
#[derive(Debug, PartialEq)]
pub struct ExprPredicate {
    expr: Expr,
    schema: Arc<[String]>,
    /// Feature names referenced, indexed by the variable slots of `expr`.
    used: Vec<String>,
    /// Position of each used feature in `schema`.
    positions: Vec<usize>,
}

impl fmt::Debug for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Always => write!(f, "true"),
            Predicate::Expr { source, .. } => write!(f, "{source}"),
            Predicate::Custom(_) => write!(f, "<custom>"),
            Predicate::And(a, b) => write!(f, "({a:?}) && ({b:?})"),
        }
    }
}

impl Predicate {
    /// Compiles `text` against the features in `schema`.
    pub fn parse(text: &str, schema: &[String]) -> Result<Predicate, ModelError> {
        Predicate::compile(text, schema.to_vec().into())
    }

    fn compile(text: &str, schema: Arc<[String]>) -> Result<Predicate, ModelError> {
        let tokens = tokenize(text).map_err(|e| ModelError::Parse {
            line: e.pos.line,
            col: e.pos.col,
            message: e.message,
        })?;
        let mut cur = Cursor::new(tokens);
        let mut used = Vec::new();
        let mut resolve = |name: &str, _pos: crate::lex::Pos| {
            if !schema.iter().any(|s| s == name) {
                return Err(ModelError::UnknownVariable(name.to_string()));
            }
            Ok(match used.iter().position(|u: &String| u == name) {
                Some(i) => i,
                None => {
                    used.push(name.to_string());
                    used.len() - 1
                }
            })
        };
        let expr = cur.expr(&mut resolve)?;
        if *cur.peek() != crate::lex::Tok::Eof {
            return Err(cur.error(format!("unexpected {} in predicate", cur.peek())));
        }
        let positions = used
            .iter()
            .map(|u| schema.iter().position(|s| s == u).unwrap())
            .collect();
        Ok(Predicate::Expr {
            source: text.trim().to_string(),
            expr: Arc::new(ExprPredicate {
                expr,
                schema,
                used,
                positions,
            }),
        })
    }

    pub fn custom(f: impl Fn(&FeatureRecord) -> bool + Send + Sync + 'static) -> Predicate {
        Predicate::Custom(Arc::new(f))
    }

    pub fn and(self, other: Predicate) -> Predicate {
        match (self, other) {
            (Predicate::Always, p) | (p, Predicate::Always) => p,
            (a, b) => Predicate::And(Box::new(a), Box::new(b)),
        }
    }

    pub fn eval(&self, record: &FeatureRecord) -> bool {
        match self {
            Predicate::Always => true,
            Predicate::Expr { expr, .. } => {
                let env: Vec<f64> = if std::ptr::eq(expr.schema.as_ref(), record.names.as_ref()) {
                    expr.positions.iter().map(|&i| record.values[i]).collect()
                } else {
                    expr.used.iter().map(|u| record.get(u).unwrap_or(f64::NAN)).collect()
                };
                expr.expr.eval(&env) != 0.0
            }
            Predicate::Custom(f) => f(record),
            Predicate::And(a, b) => a.eval(record) && b.eval(record),
        }
    }

    /// Feature names the predicate reads; `None` for custom closures.
    pub(crate) fn referenced(&self) -> Option<Vec<String>> {
        match self {
            Predicate::Always => Some(Vec::new()),
            Predicate::Expr { expr, .. } => Some(expr.used.clone()),
            Predicate::Custom(_) => None,
            Predicate::And(a, b) => {
                let mut v = a.referenced()?;
                v.extend(b.referenced()?);
                Some(v)
            }
        }
    }

    /// Textual form when the predicate has one.
    pub fn source(&self) -> Option<String> {
        match self {
            Predicate::Always => Some("true".into()),
            Predicate::Expr { source, .. } => Some(source.clone()),
            Predicate::Custom(_) => None,
            Predicate::And(a, b) => Some(format!("({}) && ({})", a.source()?, b.source()?)),
        }
    }
}

/// A parsed, statically checked population model.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    program: Program,
    schema: Arc<[String]>,
}

struct StreamSource<'a>(&'a mut RngStream);

impl Source for StreamSource<'_> {
    fn bernoulli(&mut self, p: f64) -> Result<f64, ModelError> {
        Ok(if self.0.bernoulli(p) { 1.0 } else { 0.0 })
    }

    fn gaussian(&mut self, _slot: usize, mean: f64, stddev: f64) -> Result<f64, ModelError> {
        Ok(self.0.gaussian(mean, stddev))
    }

    fn uniform(&mut self, _slot: usize, lo: f64, hi: f64) -> Result<f64, ModelError> {
        Ok(self.0.uniform_range(lo, hi))
    }

    fn categorical(&mut self, weights: &[f64]) -> Result<f64, ModelError> {
        Ok(self.0.categorical(weights) as f64)
    }
}

impl PopulationModel {
    pub fn parse(text: &str) -> Result<PopulationModel, ModelError> {
        let program = Program::parse(text)?;
        let schema: Arc<[String]> = program.schema.clone().into();
        Ok(PopulationModel { program, schema })
    }

    /// Names of the returned features.
    pub fn features(&self) -> &[String] {
        &self.schema
    }

    pub fn has_mediator(&self) -> bool {
        self.program.mediator_slots.is_some()
    }

    pub(crate) fn program(&self) -> &Program {
        &self.program
    }

    pub(crate) fn schema(&self) -> Arc<[String]> {
        self.schema.clone()
    }

    /// Compiles a conditioning predicate over this model's features.
    pub fn predicate(&self, text: &str) -> Result<Predicate, ModelError> {
        Predicate::compile(text, self.schema.clone())
    }

    /// One forward execution.
    pub fn sample(&self, rng: &mut RngStream) -> Result<FeatureRecord, ModelError> {
        let run = self.program.run(&mut StreamSource(rng), false)?;
        Ok(FeatureRecord::new(self.schema.clone(), run.values))
    }

    /// Draws until `predicate` holds, at most `max_attempts` times.
    pub fn rejection_sample(
        &self,
        predicate: &Predicate,
        rng: &mut RngStream,
        max_attempts: u64,
    ) -> Result<Accepted, ModelError> {
        for attempt in 1..=max_attempts {
            let record = self.sample(rng)?;
            if predicate.eval(&record) {
                return Ok(Accepted { record, attempts: attempt });
            }
        }
        Err(ModelError::RejectionExhausted { attempts: max_attempts })
    }

    /// Draws a member satisfying `base`, then re-runs only the mediator block
    /// with the given locals overridden, keeping every other drawn value.
    /// Features assigned in the mediator block take their re-run values.
    pub fn sample_with_mediator_override(
        &self,
        base: &Predicate,
        overrides: &BTreeMap<String, f64>,
        rng: &mut RngStream,
        max_attempts: u64,
    ) -> Result<Accepted, ModelError> {
        let mediator_slots = self.program.mediator_slots.as_ref().ok_or(ModelError::NoMediatorBlock)?;
        let resolved = self.resolve_overrides(overrides)?;
        for attempt in 1..=max_attempts {
            let run = self.program.run(&mut StreamSource(rng), true)?;
            let mut record = FeatureRecord::new(self.schema.clone(), run.values);
            if !base.eval(&record) {
                continue;
            }
            if let Some(entry) = run.mediator_entry {
                let after = self.program.rerun_mediator(&entry, &resolved, &mut StreamSource(rng))?;
                self.merge_mediator(&mut record, mediator_slots, &after);
            }
            return Ok(Accepted { record, attempts: attempt });
        }
        Err(ModelError::RejectionExhausted { attempts: max_attempts })
    }

    pub(crate) fn resolve_overrides(&self, overrides: &BTreeMap<String, f64>) -> Result<Vec<(usize, f64)>, ModelError> {
        overrides
            .iter()
            .map(|(name, v)| {
                self.program
                    .slots
                    .iter()
                    .position(|s| s == name)
                    .map(|slot| (slot, *v))
                    .ok_or_else(|| ModelError::UnknownVariable(name.clone()))
            })
            .collect()
    }

    pub(crate) fn merge_mediator(&self, record: &mut FeatureRecord, mediator_slots: &[usize], after: &[f64]) {
        for &slot in mediator_slots {
            let name = &self.program.slots[slot];
            if let Some(i) = self.schema.iter().position(|f| f == name) {
                record.values[i] = after[slot];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const JOB: &str = "
        # college ranking and experience, by gender
        is_male ~ bernoulli(0.5)
        col_rank ~ normal(25, 10)
        if is_male {
            years_exp ~ normal(15, 5)
        } else {
            years_exp ~ normal(10, 5)
        }
        return is_male, col_rank, years_exp
    ";

    #[test]
    fn parses_job_model() {
        let m = PopulationModel::parse(JOB).unwrap();
        assert_eq!(m.features(), ["is_male", "col_rank", "years_exp"]);
        assert!(!m.has_mediator());
        let r = m.sample(&mut RngStream::new(1, 0, 0)).unwrap();
        assert!(r.get("is_male") == Some(0.0) || r.get("is_male") == Some(1.0));
        assert!(r.get("col_rank").unwrap().is_finite());
    }

    #[test]
    fn parameter_range_errors() {
        assert!(matches!(
            PopulationModel::parse("x ~ bernoulli(1.5)\nreturn x"),
            Err(ModelError::InvalidParameter(_))
        ));
        assert!(matches!(
            PopulationModel::parse("x ~ gaussian(0, 0); return x"),
            Err(ModelError::InvalidParameter(_))
        ));
        assert!(matches!(
            PopulationModel::parse("x ~ categorical(0, 0); return x"),
            Err(ModelError::InvalidParameter(_))
        ));
        assert!(matches!(
            PopulationModel::parse("x ~ uniform(2, 1); return x"),
            Err(ModelError::InvalidParameter(_))
        ));
    }

    #[test]
    fn runtime_parameter_error() {
        let m = PopulationModel::parse("a ~ uniform(0, 1); x ~ bernoulli(a * 3); return x").unwrap();
        let mut rng = RngStream::new(0, 0, 0);
        let mut saw_error = false;
        for _ in 0..50 {
            if matches!(m.sample(&mut rng), Err(ModelError::InvalidParameter(_))) {
                saw_error = true;
            }
        }
        assert!(saw_error);
    }

    #[test]
    fn branch_returns_and_totality() {
        let m = PopulationModel::parse("a ~ bernoulli(0.5); if a { b = 1; return a, b } else { b = 2; return b, a }")
            .unwrap();
        assert_eq!(m.features(), ["a", "b"]);
        for i in 0..20 {
            let r = m.sample(&mut RngStream::new(0, 0, i)).unwrap();
            assert_eq!(r.get("b").unwrap(), if r.get("a").unwrap() == 1.0 { 1.0 } else { 2.0 });
        }
        assert!(matches!(
            PopulationModel::parse("a ~ bernoulli(0.5); if a { return a }"),
            Err(ModelError::NotTotal(_))
        ));
        assert!(matches!(
            PopulationModel::parse("a ~ bernoulli(0.5); return a; b = 1"),
            Err(ModelError::NotTotal(_))
        ));
        assert!(matches!(
            PopulationModel::parse("a ~ bernoulli(0.5); if a { b = 1 }; return a, b"),
            Err(ModelError::UnassignedVariable(v)) if v == "b"
        ));
        assert!(matches!(
            PopulationModel::parse("a ~ bernoulli(0.5); if a { return a } else { return b }"),
            Err(ModelError::Parse { .. }) | Err(ModelError::UnassignedVariable(_))
        ));
        assert!(PopulationModel::parse("x = y + 1; return x").is_err());
        assert!(PopulationModel::parse("x ~ poisson(1); return x").is_err());
    }

    #[test]
    fn deterministic_constant_draws() {
        let m = PopulationModel::parse("x ~ bernoulli(1.0); return x").unwrap();
        for i in 0..100 {
            assert_eq!(m.sample(&mut RngStream::new(9, 0, i)).unwrap().get("x"), Some(1.0));
        }
    }

    #[test]
    fn rejection_edge_cases() {
        let m = PopulationModel::parse("x ~ bernoulli(0.5); return x").unwrap();
        let mut rng = RngStream::new(0, 0, 0);
        let acc = m.rejection_sample(&Predicate::Always, &mut rng, 10).unwrap();
        assert_eq!(acc.attempts, 1);
        let never = m.predicate("x > 2").unwrap();
        assert_eq!(
            m.rejection_sample(&never, &mut rng, 100),
            Err(ModelError::RejectionExhausted { attempts: 100 })
        );
        let ones = m.predicate("x == 1").unwrap();
        for i in 0..200 {
            let r = m.rejection_sample(&ones, &mut RngStream::new(1, 0, i), 1000).unwrap();
            assert_eq!(r.record.get("x"), Some(1.0));
        }
    }

    #[test]
    fn job_accept_rate_is_half() {
        let m = PopulationModel::parse(JOB).unwrap();
        let pred = m.predicate("is_male == 1").unwrap();
        let (mut accepted, mut total) = (0u64, 0u64);
        for i in 0..100_000 {
            let a = m.rejection_sample(&pred, &mut RngStream::new(2, 0, i), 1000).unwrap();
            accepted += 1;
            total += a.attempts;
        }
        let rate = accepted as f64 / total as f64;
        assert!((rate - 0.5).abs() < 0.02, "{rate}");
    }

    #[test]
    fn predicate_errors() {
        let m = PopulationModel::parse("x ~ bernoulli(0.5); return x").unwrap();
        assert!(matches!(m.predicate("y == 1"), Err(ModelError::UnknownVariable(_))));
        assert!(m.predicate("x == 1 )").is_err());
    }

    const MEDIATED: &str = "
        is_male ~ bernoulli(0.5)
        skill ~ bernoulli(0.5)
        mediator {
            college ~ bernoulli(is_male ? 0.8 : 0.4)
        }
        return is_male, skill, college
    ";

    #[test]
    fn mediator_override_shifts_mediator_only() {
        let m = PopulationModel::parse(MEDIATED).unwrap();
        assert!(m.has_mediator());
        let minority = m.predicate("is_male == 0").unwrap();
        let over: BTreeMap<String, f64> = [("is_male".to_string(), 1.0)].into();
        let n = 100_000;
        let mut college = 0.0;
        let mut skill = 0.0;
        for i in 0..n {
            let a = m
                .sample_with_mediator_override(&minority, &over, &mut RngStream::new(4, 0, i), 1000)
                .unwrap();
            assert_eq!(a.record.get("is_male"), Some(0.0));
            college += a.record.get("college").unwrap();
            skill += a.record.get("skill").unwrap();
        }
        assert!((college / n as f64 - 0.8).abs() < 0.01);
        assert!((skill / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn mediator_errors() {
        let m = PopulationModel::parse("x ~ bernoulli(0.5); return x").unwrap();
        let over = BTreeMap::new();
        assert_eq!(
            m.sample_with_mediator_override(&Predicate::Always, &over, &mut RngStream::new(0, 0, 0), 10),
            Err(ModelError::NoMediatorBlock)
        );
        let m = PopulationModel::parse(MEDIATED).unwrap();
        let never = m.predicate("is_male == 2").unwrap();
        assert_eq!(
            m.sample_with_mediator_override(&never, &over, &mut RngStream::new(0, 0, 0), 10),
            Err(ModelError::RejectionExhausted { attempts: 10 })
        );
        let bad: BTreeMap<String, f64> = [("nope".to_string(), 1.0)].into();
        assert!(matches!(
            m.sample_with_mediator_override(&Predicate::Always, &bad, &mut RngStream::new(0, 0, 0), 10),
            Err(ModelError::UnknownVariable(_))
        ));
        assert!(PopulationModel::parse("mediator { x ~ bernoulli(0.5); return x }").is_err());
        assert!(PopulationModel::parse("a ~ bernoulli(0.5); if a { mediator { x = 1 } }; x = 2; return x").is_err());
        assert_eq!(
            PopulationModel::parse("a ~ bernoulli(0.5); mediator { c = a } h = c; return a, h"),
            Err(ModelError::MediatorDependency("c".into()))
        );
    }

    #[test]
    fn mediator_ignoring_attribute_matches_plain_sampling() {
        let src = "a ~ bernoulli(0.3); mediator { m ~ bernoulli(0.6) } return a, m";
        let m = PopulationModel::parse(src).unwrap();
        let base = m.predicate("a == 0").unwrap();
        let over: BTreeMap<String, f64> = [("a".to_string(), 1.0)].into();
        let n = 50_000;
        let (mut with, mut without) = (0.0, 0.0);
        for i in 0..n {
            with += m
                .sample_with_mediator_override(&base, &over, &mut RngStream::new(1, 0, i), 1000)
                .unwrap()
                .record
                .get("m")
                .unwrap();
            without += m
                .rejection_sample(&base, &mut RngStream::new(2, 0, i), 1000)
                .unwrap()
                .record
                .get("m")
                .unwrap();
        }
        assert!((with / n as f64 - without / n as f64).abs() < 0.02);
    }
}
