use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::SpecError;

/// A fairness specification.
///
/// Arithmetic nodes (`Mu`, `Const`, `Sum`, `Neg`, `Prod`, `Inv`) denote real
/// numbers; boolean nodes (`GeqZero`, `And`, `Or`, `Not`) denote truth values.
/// Boolean nodes never appear below arithmetic nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecExpr {
    /// Expectation of the named sampled variable.
    Mu(String),
    Const(f64),
    Sum(Box<SpecExpr>, Box<SpecExpr>),
    Neg(Box<SpecExpr>),
    Prod(Box<SpecExpr>, Box<SpecExpr>),
    Inv(Box<SpecExpr>),
    GeqZero(Box<SpecExpr>),
    And(Box<SpecExpr>, Box<SpecExpr>),
    Or(Box<SpecExpr>, Box<SpecExpr>),
    Not(Box<SpecExpr>),
}

/// Result of exact evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpecValue {
    Real(f64),
    Bool(bool),
}

impl SpecValue {
    pub fn as_real(self) -> Option<f64> {
        match self {
            SpecValue::Real(v) => Some(v),
            SpecValue::Bool(_) => None,
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            SpecValue::Bool(b) => Some(b),
            SpecValue::Real(_) => None,
        }
    }
}

impl SpecExpr {
    pub fn mu(name: impl Into<String>) -> Self {
        SpecExpr::Mu(name.into())
    }

    pub fn constant(c: f64) -> Self {
        SpecExpr::Const(c)
    }

    pub fn sum(a: SpecExpr, b: SpecExpr) -> Self {
        SpecExpr::Sum(Box::new(a), Box::new(b))
    }

    pub fn neg(a: SpecExpr) -> Self {
        SpecExpr::Neg(Box::new(a))
    }

    /// `a - b`, i.e. `a + (-b)`.
    pub fn sub(a: SpecExpr, b: SpecExpr) -> Self {
        SpecExpr::sum(a, SpecExpr::neg(b))
    }

    pub fn prod(a: SpecExpr, b: SpecExpr) -> Self {
        SpecExpr::Prod(Box::new(a), Box::new(b))
    }

    pub fn inv(a: SpecExpr) -> Self {
        SpecExpr::Inv(Box::new(a))
    }

    /// `a / b`, i.e. `a * b^-1`.
    pub fn div(a: SpecExpr, b: SpecExpr) -> Self {
        SpecExpr::prod(a, SpecExpr::inv(b))
    }

    pub fn geq_zero(a: SpecExpr) -> Self {
        SpecExpr::GeqZero(Box::new(a))
    }

    /// `a >= b`, i.e. `a + (-b) >= 0`; a literal zero on the right gives
    /// `a >= 0` directly.
    pub fn geq(a: SpecExpr, b: SpecExpr) -> Self {
        match b {
            SpecExpr::Const(c) if c == 0.0 => SpecExpr::geq_zero(a),
            b => SpecExpr::geq_zero(SpecExpr::sub(a, b)),
        }
    }

    pub fn and(a: SpecExpr, b: SpecExpr) -> Self {
        SpecExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: SpecExpr, b: SpecExpr) -> Self {
        SpecExpr::Or(Box::new(a), Box::new(b))
    }

    pub fn not(a: SpecExpr) -> Self {
        SpecExpr::Not(Box::new(a))
    }

    /// True for nodes of the boolean layer.
    pub fn is_boolean(&self) -> bool {
        matches!(
            self,
            SpecExpr::GeqZero(_) | SpecExpr::And(..) | SpecExpr::Or(..) | SpecExpr::Not(_)
        )
    }

    /// Checks layering (no boolean under arithmetic, no arithmetic directly
    /// under a connective) and finiteness of constants.
    pub fn check(&self) -> Result<(), SpecError> {
        use SpecExpr::*;
        let arith = |e: &SpecExpr| -> Result<(), SpecError> {
            if e.is_boolean() {
                Err(SpecError::IllTyped(format!("boolean `{e}` used as a number")))
            } else {
                e.check()
            }
        };
        let boolean = |e: &SpecExpr| -> Result<(), SpecError> {
            if e.is_boolean() {
                e.check()
            } else {
                Err(SpecError::IllTyped(format!("number `{e}` used as a condition")))
            }
        };
        match self {
            Mu(_) => Ok(()),
            Const(c) if c.is_finite() => Ok(()),
            Const(c) => Err(SpecError::IllTyped(format!("non-finite constant {c}"))),
            Sum(a, b) | Prod(a, b) => arith(a).and(arith(b)),
            Neg(a) | Inv(a) | GeqZero(a) => arith(a),
            And(a, b) | Or(a, b) => boolean(a).and(boolean(b)),
            Not(a) => boolean(a),
        }
    }

    /// The confidence-budget weight: the number of `Mu` occurrences.
    pub fn delta_weight(&self) -> u64 {
        use SpecExpr::*;
        match self {
            Mu(_) => 1,
            Const(_) => 0,
            Sum(a, b) | Prod(a, b) | And(a, b) | Or(a, b) => a.delta_weight() + b.delta_weight(),
            Neg(a) | Inv(a) | GeqZero(a) | Not(a) => a.delta_weight(),
        }
    }

    /// Names of all `Mu` leaves, deduplicated.
    pub fn free_variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        use SpecExpr::*;
        match self {
            Mu(name) => {
                out.insert(name.clone());
            }
            Const(_) => {}
            Sum(a, b) | Prod(a, b) | And(a, b) | Or(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Neg(a) | Inv(a) | GeqZero(a) | Not(a) => a.collect_vars(out),
        }
    }

    /// Exact denotation given the true means. `X >= 0` holds when `X` is
    /// exactly zero.
    pub fn eval_exact(&self, means: &BTreeMap<String, f64>) -> Result<SpecValue, SpecError> {
        use SpecExpr::*;
        let real = |e: &SpecExpr| -> Result<f64, SpecError> {
            e.eval_exact(means)?
                .as_real()
                .ok_or_else(|| SpecError::IllTyped(format!("boolean `{e}` used as a number")))
        };
        let boolean = |e: &SpecExpr| -> Result<bool, SpecError> {
            e.eval_exact(means)?
                .as_bool()
                .ok_or_else(|| SpecError::IllTyped(format!("number `{e}` used as a condition")))
        };
        Ok(match self {
            Mu(name) => SpecValue::Real(
                *means
                    .get(name)
                    .ok_or_else(|| SpecError::UnboundVariable(name.clone()))?,
            ),
            Const(c) => SpecValue::Real(*c),
            Sum(a, b) => SpecValue::Real(real(a)? + real(b)?),
            Neg(a) => SpecValue::Real(-real(a)?),
            Prod(a, b) => SpecValue::Real(real(a)? * real(b)?),
            Inv(a) => {
                let v = real(a)?;
                if v == 0.0 {
                    return Err(SpecError::DivisionByZero(a.to_string()));
                }
                SpecValue::Real(1.0 / v)
            }
            GeqZero(a) => SpecValue::Bool(real(a)? >= 0.0),
            And(a, b) => {
                let (x, y) = (boolean(a)?, boolean(b)?);
                SpecValue::Bool(x && y)
            }
            Or(a, b) => {
                let (x, y) = (boolean(a)?, boolean(b)?);
                SpecValue::Bool(x || y)
            }
            Not(a) => SpecValue::Bool(!boolean(a)?),
        })
    }
}

/// Prints a fully parenthesized form that `parse_spec` reads back into the
/// same tree.
impl fmt::Display for SpecExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use SpecExpr::*;
        match self {
            Mu(name) => write!(f, "mu({name})"),
            Const(c) if c.is_sign_negative() => write!(f, "({c:?})"),
            Const(c) => write!(f, "{c:?}"),
            Sum(a, b) => write!(f, "({a} + {b})"),
            Neg(a) => write!(f, "-({a})"),
            Prod(a, b) => write!(f, "({a} * {b})"),
            Inv(a) => write!(f, "inv({a})"),
            GeqZero(a) => write!(f, "({a} >= 0)"),
            And(a, b) => write!(f, "({a} && {b})"),
            Or(a, b) => write!(f, "({a} || {b})"),
            Not(a) => write!(f, "!{a}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parity() -> SpecExpr {
        SpecExpr::geq(
            SpecExpr::div(SpecExpr::mu("min"), SpecExpr::mu("maj")),
            SpecExpr::constant(0.85),
        )
    }

    fn means(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn delta_weight_examples() {
        assert_eq!(SpecExpr::mu("z").delta_weight(), 1);
        assert_eq!(parity().delta_weight(), 2);
        let no_leaves = SpecExpr::geq_zero(SpecExpr::sub(SpecExpr::constant(1.0), SpecExpr::constant(2.0)));
        assert_eq!(no_leaves.delta_weight(), 0);
    }

    #[test]
    fn free_variables_examples() {
        let vars: Vec<_> = parity().free_variables().into_iter().collect();
        assert_eq!(vars, vec!["maj", "min"]);
        assert!(SpecExpr::constant(1.0).free_variables().is_empty());
        let dup = SpecExpr::and(
            SpecExpr::geq_zero(SpecExpr::mu("a")),
            SpecExpr::geq_zero(SpecExpr::mu("a")),
        );
        assert_eq!(dup.free_variables().len(), 1);
    }

    #[test]
    fn eval_parity_and_boundary() {
        assert_eq!(
            parity().eval_exact(&means(&[("min", 0.6), ("maj", 0.5)])).unwrap(),
            SpecValue::Bool(true)
        );
        let boundary = SpecExpr::geq_zero(SpecExpr::mu("z"));
        assert_eq!(boundary.eval_exact(&means(&[("z", 0.0)])).unwrap(), SpecValue::Bool(true));
    }

    #[test]
    fn eval_errors() {
        let inv = SpecExpr::geq_zero(SpecExpr::inv(SpecExpr::mu("z")));
        assert!(matches!(
            inv.eval_exact(&means(&[("z", 0.0)])),
            Err(SpecError::DivisionByZero(_))
        ));
        assert!(matches!(
            inv.eval_exact(&means(&[])),
            Err(SpecError::UnboundVariable(v)) if v == "z"
        ));
    }

    #[test]
    fn check_rejects_mixed_layers() {
        let bad = SpecExpr::sum(SpecExpr::geq_zero(SpecExpr::mu("a")), SpecExpr::constant(1.0));
        assert!(bad.check().is_err());
        let bad = SpecExpr::not(SpecExpr::mu("a"));
        assert!(bad.check().is_err());
        assert!(SpecExpr::constant(f64::NAN).check().is_err());
        assert!(parity().check().is_ok());
    }
}
