//! Fairness specification language: AST, parser, exact semantics and the
//! confidence-budget weight.

mod ast;
mod parse;

pub use ast::{SpecExpr, SpecValue};
pub use parse::parse_spec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("parse error at {line}:{col}: {message}")]
    Parse { line: usize, col: usize, message: String },
    #[error("unknown operator `{op}` at {line}:{col}")]
    UnknownOperator { line: usize, col: usize, op: String },
    #[error("ill-typed specification: {0}")]
    IllTyped(String),
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero: `{0}` evaluates to 0")]
    DivisionByZero(String),
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;

    fn arb_term() -> impl Strategy<Value = SpecExpr> {
        let leaf = prop_oneof![
            "[a-d]".prop_map(SpecExpr::Mu),
            (-5.0f64..5.0).prop_map(SpecExpr::Const),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| SpecExpr::sum(a, b)),
                inner.clone().prop_map(SpecExpr::neg),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| SpecExpr::prod(a, b)),
                inner.prop_map(SpecExpr::inv),
            ]
        })
    }

    pub(crate) fn arb_spec() -> impl Strategy<Value = SpecExpr> {
        let atom = arb_term().prop_map(SpecExpr::geq_zero);
        atom.prop_recursive(3, 12, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| SpecExpr::and(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| SpecExpr::or(a, b)),
                inner.prop_map(SpecExpr::not),
            ]
        })
    }

    fn count_mu(e: &SpecExpr) -> u64 {
        // Independent of `delta_weight`: count occurrences in the printed form.
        e.to_string().matches("mu(").count() as u64
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_spec()) {
            let printed = e.to_string();
            let back = parse_spec(&printed).unwrap();
            prop_assert_eq!(back, e);
        }

        #[test]
        fn delta_weight_counts_mu_occurrences(e in arb_spec()) {
            prop_assert_eq!(e.delta_weight(), count_mu(&e));
        }

        #[test]
        fn de_morgan(a in arb_spec(), b in arb_spec(), ma in 0.05f64..1.0, mb in 0.05f64..1.0,
                     mc in 0.05f64..1.0, md in 0.05f64..1.0) {
            let means: BTreeMap<String, f64> =
                [("a", ma), ("b", mb), ("c", mc), ("d", md)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
            let lhs = SpecExpr::not(SpecExpr::and(a.clone(), b.clone())).eval_exact(&means);
            let rhs = SpecExpr::or(SpecExpr::not(a), SpecExpr::not(b)).eval_exact(&means);
            match (lhs, rhs) {
                (Ok(l), Ok(r)) => prop_assert_eq!(l, r),
                (Err(_), Err(_)) => {}
                (l, r) => prop_assert!(false, "{:?} vs {:?}", l, r),
            }
        }

        #[test]
        fn eval_is_deterministic(e in arb_spec(), ma in 0.05f64..1.0) {
            let means: BTreeMap<String, f64> =
                ["a", "b", "c", "d"].iter().map(|k| (k.to_string(), ma)).collect();
            prop_assert_eq!(e.eval_exact(&means), e.eval_exact(&means));
        }
    }
}
