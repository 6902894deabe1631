//! Derivation of high-probability lemmas for specification nodes.
//!
//! An arithmetic node `X` gets an [`EstimateLemma`] `(E, eps, delta)`:
//! `|E - [[X]]| <= eps` with probability at least `1 - delta`. A boolean node
//! `Y` gets a [`BoolLemma`] `(I, gamma)`: `I = [[Y]]` with probability at
//! least `1 - gamma`. Leaf lemmas come from a [`LemmaEnv`]; every other
//! lemma is derived compositionally. Failure masses add and are never
//! capped.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::speclang::SpecExpr;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateLemma {
    pub estimate: f64,
    pub eps: f64,
    pub delta: f64,
}

impl EstimateLemma {
    pub fn new(estimate: f64, eps: f64, delta: f64) -> Self {
        EstimateLemma { estimate, eps, delta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoolLemma {
    pub value: bool,
    pub gamma: f64,
}

/// Leaf lemmas, one per sampled variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LemmaEnv(BTreeMap<String, EstimateLemma>);

impl LemmaEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, lemma: EstimateLemma) {
        self.0.insert(name.into(), lemma);
    }

    pub fn get(&self, name: &str) -> Option<&EstimateLemma> {
        self.0.get(name)
    }
}

impl FromIterator<(String, EstimateLemma)> for LemmaEnv {
    fn from_iter<I: IntoIterator<Item = (String, EstimateLemma)>>(iter: I) -> Self {
        LemmaEnv(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferError {
    #[error("no lemma for variable `{0}`")]
    UnboundVariable(String),
}

/// Which child was taken on the way down from the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Left,
    Right,
    Child,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FailedPremise {
    /// `|E| > eps` did not hold below an inverse.
    InverseNearZero { estimate: f64, eps: f64 },
    /// Neither `E - eps >= 0` nor `E + eps < 0` held.
    InequalityUnresolved { estimate: f64, eps: f64 },
}

/// No rule applies at the node reached by `path`.
#[derive(Debug, Clone, PartialEq)]
pub struct Undetermined {
    pub path: Vec<Step>,
    pub premise: FailedPremise,
}

impl fmt::Display for Undetermined {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path: Vec<&str> = self
            .path
            .iter()
            .map(|s| match s {
                Step::Left => "left",
                Step::Right => "right",
                Step::Child => "child",
            })
            .collect();
        let path = if path.is_empty() { "root".to_string() } else { path.join(".") };
        match self.premise {
            FailedPremise::InverseNearZero { estimate, eps } => {
                write!(f, "inverse at {path}: |{estimate}| <= {eps}")
            }
            FailedPremise::InequalityUnresolved { estimate, eps } => {
                write!(f, "inequality at {path}: {estimate} +/- {eps} straddles 0")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inference {
    Estimate(EstimateLemma),
    Bool(BoolLemma),
    Undetermined(Undetermined),
}

impl Inference {
    pub fn as_bool(&self) -> Option<BoolLemma> {
        match self {
            Inference::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_estimate(&self) -> Option<EstimateLemma> {
        match self {
            Inference::Estimate(e) => Some(*e),
            _ => None,
        }
    }
}

enum Derived {
    Estimate(EstimateLemma),
    Bool(BoolLemma),
}

type Outcome = Result<Result<Derived, Undetermined>, InferError>;

/// Applies the derivation rules bottom-up. `Undetermined` is an ordinary
/// result: some rule premise failed and more samples are needed.
///
/// # Panics
/// If `spec` mixes layers (see [`SpecExpr::check`]).
pub fn infer(spec: &SpecExpr, env: &LemmaEnv) -> Result<Inference, InferError> {
    let mut path = Vec::new();
    Ok(match derive(spec, env, &mut path)? {
        Ok(Derived::Estimate(e)) => Inference::Estimate(e),
        Ok(Derived::Bool(b)) => Inference::Bool(b),
        Err(u) => Inference::Undetermined(u),
    })
}

fn estimate(d: Derived) -> EstimateLemma {
    match d {
        Derived::Estimate(e) => e,
        Derived::Bool(_) => panic!("condition used where a number is required"),
    }
}

fn boolean(d: Derived) -> BoolLemma {
    match d {
        Derived::Bool(b) => b,
        Derived::Estimate(_) => panic!("number used where a condition is required"),
    }
}

fn derive(spec: &SpecExpr, env: &LemmaEnv, path: &mut Vec<Step>) -> Outcome {
    use SpecExpr::*;

    macro_rules! sub {
        ($e:expr, $step:expr) => {{
            path.push($step);
            let r = derive($e, env, path)?;
            path.pop();
            match r {
                Ok(d) => d,
                Err(u) => return Ok(Err(u)),
            }
        }};
    }

    let out = match spec {
        Mu(name) => Derived::Estimate(
            *env.get(name)
                .ok_or_else(|| InferError::UnboundVariable(name.clone()))?,
        ),
        Const(c) => Derived::Estimate(EstimateLemma::new(*c, 0.0, 0.0)),
        Sum(a, b) => {
            let x = estimate(sub!(a, Step::Left));
            let y = estimate(sub!(b, Step::Right));
            Derived::Estimate(EstimateLemma::new(
                x.estimate + y.estimate,
                x.eps + y.eps,
                x.delta + y.delta,
            ))
        }
        Neg(a) => {
            let x = estimate(sub!(a, Step::Child));
            Derived::Estimate(EstimateLemma::new(-x.estimate, x.eps, x.delta))
        }
        Prod(a, b) => {
            let x = estimate(sub!(a, Step::Left));
            let y = estimate(sub!(b, Step::Right));
            Derived::Estimate(EstimateLemma::new(
                x.estimate * y.estimate,
                x.estimate.abs() * y.eps + y.estimate.abs() * x.eps + x.eps * y.eps,
                x.delta + y.delta,
            ))
        }
        Inv(a) => {
            let x = estimate(sub!(a, Step::Child));
            let mag = x.estimate.abs();
            if !(mag > x.eps) {
                return Ok(Err(Undetermined {
                    path: path.clone(),
                    premise: FailedPremise::InverseNearZero {
                        estimate: x.estimate,
                        eps: x.eps,
                    },
                }));
            }
            Derived::Estimate(EstimateLemma::new(
                1.0 / x.estimate,
                x.eps / (mag * (mag - x.eps)),
                x.delta,
            ))
        }
        GeqZero(a) => {
            let x = estimate(sub!(a, Step::Child));
            let value = if x.estimate - x.eps >= 0.0 {
                true
            } else if x.estimate + x.eps < 0.0 {
                false
            } else {
                return Ok(Err(Undetermined {
                    path: path.clone(),
                    premise: FailedPremise::InequalityUnresolved {
                        estimate: x.estimate,
                        eps: x.eps,
                    },
                }));
            };
            Derived::Bool(BoolLemma { value, gamma: x.delta })
        }
        And(a, b) => {
            let x = boolean(sub!(a, Step::Left));
            let y = boolean(sub!(b, Step::Right));
            Derived::Bool(BoolLemma {
                value: x.value && y.value,
                gamma: x.gamma + y.gamma,
            })
        }
        Or(a, b) => {
            let x = boolean(sub!(a, Step::Left));
            let y = boolean(sub!(b, Step::Right));
            Derived::Bool(BoolLemma {
                value: x.value || y.value,
                gamma: x.gamma + y.gamma,
            })
        }
        Not(a) => {
            let x = boolean(sub!(a, Step::Child));
            Derived::Bool(BoolLemma {
                value: !x.value,
                gamma: x.gamma,
            })
        }
    };
    Ok(Ok(out))
}

/// The failure mass `infer` reports when every leaf lemma carries
/// `leaf_delta`, accumulated in the same order and precision as `infer`.
pub fn uniform_failure_mass(spec: &SpecExpr, leaf_delta: f64) -> f64 {
    use SpecExpr::*;
    match spec {
        Mu(_) => leaf_delta,
        Const(_) => 0.0,
        Sum(a, b) | Prod(a, b) | And(a, b) | Or(a, b) => {
            uniform_failure_mass(a, leaf_delta) + uniform_failure_mass(b, leaf_delta)
        }
        Neg(a) | Inv(a) | GeqZero(a) | Not(a) => uniform_failure_mass(a, leaf_delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speclang::parse_spec;

    fn env(pairs: &[(&str, (f64, f64, f64))]) -> LemmaEnv {
        pairs
            .iter()
            .map(|(k, (e, eps, d))| (k.to_string(), EstimateLemma::new(*e, *eps, *d)))
            .collect()
    }

    fn close(a: EstimateLemma, b: EstimateLemma) -> bool {
        (a.estimate - b.estimate).abs() < 1e-12
            && (a.eps - b.eps).abs() < 1e-12
            && (a.delta - b.delta).abs() < 1e-12
    }

    #[test]
    fn sum_rule() {
        let g = env(&[("a", (0.5, 0.1, 0.01)), ("b", (0.3, 0.05, 0.02))]);
        let r = infer(&SpecExpr::sum(SpecExpr::mu("a"), SpecExpr::mu("b")), &g).unwrap();
        assert!(close(r.as_estimate().unwrap(), EstimateLemma::new(0.8, 0.15, 0.03)));
    }

    #[test]
    fn inverse_rule() {
        let g = env(&[("a", (0.5, 0.1, 0.01))]);
        let r = infer(&SpecExpr::inv(SpecExpr::mu("a")), &g).unwrap();
        assert!(close(r.as_estimate().unwrap(), EstimateLemma::new(2.0, 0.5, 0.01)));

        let g = env(&[("a", (0.05, 0.1, 0.01))]);
        match infer(&SpecExpr::inv(SpecExpr::mu("a")), &g).unwrap() {
            Inference::Undetermined(u) => {
                assert!(u.path.is_empty());
                assert!(matches!(u.premise, FailedPremise::InverseNearZero { .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inequality_rules() {
        let spec = SpecExpr::geq_zero(SpecExpr::mu("a"));
        let g = env(&[("a", (0.3, 0.1, 0.02))]);
        assert_eq!(
            infer(&spec, &g).unwrap(),
            Inference::Bool(BoolLemma { value: true, gamma: 0.02 })
        );
        let g = env(&[("a", (-0.3, 0.1, 0.02))]);
        assert_eq!(
            infer(&spec, &g).unwrap(),
            Inference::Bool(BoolLemma { value: false, gamma: 0.02 })
        );
        let g = env(&[("a", (0.05, 0.1, 0.02))]);
        assert!(matches!(infer(&spec, &g).unwrap(), Inference::Undetermined(_)));
        // E - eps == 0 counts as proven; E + eps == 0 does not disprove.
        let g = env(&[("a", (0.25, 0.25, 0.02))]);
        assert_eq!(infer(&spec, &g).unwrap().as_bool().unwrap().value, true);
        let g = env(&[("a", (-0.25, 0.25, 0.02))]);
        assert!(matches!(infer(&spec, &g).unwrap(), Inference::Undetermined(_)));
    }

    #[test]
    fn constant_product_and_connectives() {
        let g = env(&[("a", (0.5, 0.1, 0.01)), ("b", (0.4, 0.2, 0.03))]);
        let r = infer(&SpecExpr::prod(SpecExpr::mu("a"), SpecExpr::mu("b")), &g).unwrap();
        assert!(close(
            r.as_estimate().unwrap(),
            EstimateLemma::new(0.2, 0.5 * 0.2 + 0.4 * 0.1 + 0.1 * 0.2, 0.04)
        ));
        let r = infer(&SpecExpr::constant(3.0), &g).unwrap();
        assert_eq!(r.as_estimate().unwrap(), EstimateLemma::new(3.0, 0.0, 0.0));

        let spec = parse_spec("mu(a) >= 0.2 && !(mu(b) >= 0.9) || mu(a) < 0").unwrap();
        let b = infer(&spec, &g).unwrap().as_bool().unwrap();
        assert!(b.value);
        assert!((b.gamma - 0.05).abs() < 1e-15);
    }

    #[test]
    fn undetermined_propagates_with_path() {
        let spec = parse_spec("mu(a) >= 0 && mu(b) >= 0.3").unwrap();
        let g = env(&[("a", (0.5, 0.1, 0.01)), ("b", (0.4, 0.2, 0.03))]);
        match infer(&spec, &g).unwrap() {
            Inference::Undetermined(u) => {
                assert_eq!(u.path, vec![Step::Right]);
                assert!(u.to_string().starts_with("inequality at right"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbound_variable_is_an_error() {
        let spec = parse_spec("mu(zz) >= 0").unwrap();
        assert_eq!(
            infer(&spec, &LemmaEnv::new()),
            Err(InferError::UnboundVariable("zz".into()))
        );
    }

    #[test]
    fn uniform_failure_mass_matches_infer() {
        let spec = parse_spec("mu(a) / mu(b) >= 0.5 && (mu(a) - mu(c) >= -1 || mu(c) * mu(c) >= 0)").unwrap();
        let d = 1e-5 / 5.0;
        let g = env(&[("a", (0.5, 0.01, d)), ("b", (0.6, 0.01, d)), ("c", (0.2, 0.01, d))]);
        let b = infer(&spec, &g).unwrap().as_bool().unwrap();
        assert_eq!(b.gamma, uniform_failure_mass(&spec, d));
    }

    #[test]
    fn worked_parity_radius_matches_compositional_rules() {
        // Closed-form radius for mu(min) * mu(maj)^-1 versus the product and
        // inverse rules applied in sequence.
        let (em, ep, eaj, epj) = (0.62, 0.03, 0.71, 0.02);
        let g = env(&[("min", (em, ep, 1e-3)), ("maj", (eaj, epj, 1e-3))]);
        let r = infer(&SpecExpr::div(SpecExpr::mu("min"), SpecExpr::mu("maj")), &g)
            .unwrap()
            .as_estimate()
            .unwrap();
        let closed = ep / eaj + epj * (em + ep) / (eaj * (eaj - epj));
        assert!((r.eps - closed).abs() < 1e-12, "{} vs {closed}", r.eps);
    }
}
