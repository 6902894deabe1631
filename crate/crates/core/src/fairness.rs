//! Fairness properties compiled into a specification plus the sampled
//! variables its `mu(...)` leaves refer to.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::classifier::Classifier;
use crate::popmodel::{PopulationModel, Predicate};
use crate::speclang::SpecExpr;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FairnessError {
    #[error("threshold c = {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("lambda must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("the set of minority groups is empty")]
    EmptyMinoritySet,
    #[error("population model has no mediator block")]
    NoMediatorBlock,
    #[error("specification variables {spec:?} do not match bindings {bindings:?}")]
    BindingMismatch { spec: Vec<String>, bindings: Vec<String> },
    #[error("invalid specification: {0}")]
    Spec(String),
}

/// How one `mu(name)` is sampled: draw `V ~ model | condition` (optionally
/// with the mediator re-run under `mediator_override`), then take `f(V)`.
/// Pairwise variables draw two members and take the indicator
/// `|f(V) - f(V')| <= lambda * |V - V'|_1`.
#[derive(Debug, Clone)]
pub struct SampledVariable {
    pub model: Arc<PopulationModel>,
    pub condition: Predicate,
    pub mediator_override: Option<BTreeMap<String, f64>>,
    pub classifier: Arc<Classifier>,
    pub pairwise_lambda: Option<f64>,
}

impl SampledVariable {
    pub fn new(model: Arc<PopulationModel>, condition: Predicate, classifier: Arc<Classifier>) -> Self {
        SampledVariable {
            model,
            condition,
            mediator_override: None,
            classifier,
            pairwise_lambda: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FairnessProblem {
    pub spec: SpecExpr,
    pub bindings: BTreeMap<String, SampledVariable>,
    pub c: f64,
}

impl FairnessProblem {
    /// Checks that the spec is well layered and that its variables are
    /// exactly the binding keys.
    pub fn new(spec: SpecExpr, bindings: BTreeMap<String, SampledVariable>, c: f64) -> Result<Self, FairnessError> {
        spec.check().map_err(|e| FairnessError::Spec(e.to_string()))?;
        if !spec.is_boolean() {
            return Err(FairnessError::Spec("specification root must be a condition".into()));
        }
        let vars: Vec<String> = spec.free_variables().into_iter().collect();
        let keys: Vec<String> = bindings.keys().cloned().collect();
        if vars != keys {
            return Err(FairnessError::BindingMismatch { spec: vars, bindings: keys });
        }
        Ok(FairnessProblem { spec, bindings, c })
    }
}

/// Spec shape for parity-style properties.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ParityForm {
    /// `mu(min) / mu(maj) >= 1 - c`.
    #[default]
    Ratio,
    /// `mu(min) - (1 - c) * mu(maj) >= 0`; decides even when `mu(maj) = 0`.
    Difference,
}

fn check_c(c: f64) -> Result<(), FairnessError> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(FairnessError::InvalidThreshold(c))
    }
}

fn parity_spec(min: &str, maj: &str, c: f64, form: ParityForm) -> SpecExpr {
    match form {
        ParityForm::Ratio => SpecExpr::geq(
            SpecExpr::div(SpecExpr::mu(min), SpecExpr::mu(maj)),
            SpecExpr::constant(1.0 - c),
        ),
        ParityForm::Difference => SpecExpr::geq_zero(SpecExpr::sub(
            SpecExpr::mu(min),
            SpecExpr::prod(SpecExpr::constant(1.0 - c), SpecExpr::mu(maj)),
        )),
    }
}

fn bind(model: &Arc<PopulationModel>, condition: Predicate, classifier: &Arc<Classifier>) -> SampledVariable {
    SampledVariable::new(model.clone(), condition, classifier.clone())
}

/// Minority positive rate is at least `1 - c` times the majority rate.
pub fn demographic_parity(
    c: f64,
    majority: Predicate,
    minority: Predicate,
    model: Arc<PopulationModel>,
    classifier: Arc<Classifier>,
    form: ParityForm,
) -> Result<FairnessProblem, FairnessError> {
    check_c(c)?;
    let bindings = BTreeMap::from([
        ("maj".to_string(), bind(&model, majority, &classifier)),
        ("min".to_string(), bind(&model, minority, &classifier)),
    ]);
    FairnessProblem::new(parity_spec("min", "maj", c, form), bindings, c)
}

/// Demographic parity restricted to members satisfying `qualified`.
pub fn equal_opportunity(
    c: f64,
    majority: Predicate,
    minority: Predicate,
    qualified: Predicate,
    model: Arc<PopulationModel>,
    classifier: Arc<Classifier>,
    form: ParityForm,
) -> Result<FairnessProblem, FairnessError> {
    demographic_parity(
        c,
        majority.and(qualified.clone()),
        minority.and(qualified),
        model,
        classifier,
        form,
    )
}

/// `mu(min) - mu(maj) + c >= 0`, where minority members have their mediator
/// re-drawn as if they belonged to the majority (`as_majority` overrides the
/// sensitive attribute).
pub fn path_specific(
    c: f64,
    majority: Predicate,
    minority: Predicate,
    as_majority: BTreeMap<String, f64>,
    model: Arc<PopulationModel>,
    classifier: Arc<Classifier>,
) -> Result<FairnessProblem, FairnessError> {
    check_c(c)?;
    if !model.has_mediator() {
        return Err(FairnessError::NoMediatorBlock);
    }
    let mut min = bind(&model, minority, &classifier);
    min.mediator_override = Some(as_majority);
    let bindings = BTreeMap::from([("maj".to_string(), bind(&model, majority, &classifier)), ("min".to_string(), min)]);
    let spec = SpecExpr::geq_zero(SpecExpr::sum(
        SpecExpr::sub(SpecExpr::mu("min"), SpecExpr::mu("maj")),
        SpecExpr::constant(c),
    ));
    FairnessProblem::new(spec, bindings, c)
}

/// Conjunction of ratio parity over several minority groups, each compared
/// with the same majority.
pub fn group_parity(
    c: f64,
    majority: Predicate,
    minorities: Vec<(String, Predicate)>,
    model: Arc<PopulationModel>,
    classifier: Arc<Classifier>,
) -> Result<FairnessProblem, FairnessError> {
    check_c(c)?;
    if minorities.is_empty() {
        return Err(FairnessError::EmptyMinoritySet);
    }
    let mut bindings = BTreeMap::from([("maj".to_string(), bind(&model, majority, &classifier))]);
    let mut spec: Option<SpecExpr> = None;
    for (name, pred) in minorities {
        let clause = parity_spec(&name, "maj", c, ParityForm::Ratio);
        spec = Some(match spec {
            None => clause,
            Some(acc) => SpecExpr::and(acc, clause),
        });
        bindings.insert(name, bind(&model, pred, &classifier));
    }
    FairnessProblem::new(spec.expect("nonempty"), bindings, c)
}

/// `|mu(maj) - mu(min)| <= c` for a real-valued predictor.
pub fn regression_parity(
    c: f64,
    majority: Predicate,
    minority: Predicate,
    model: Arc<PopulationModel>,
    classifier: Arc<Classifier>,
) -> Result<FairnessProblem, FairnessError> {
    check_c(c)?;
    let side = |a: &str, b: &str| {
        SpecExpr::geq_zero(SpecExpr::sum(
            SpecExpr::sub(SpecExpr::mu(a), SpecExpr::mu(b)),
            SpecExpr::constant(c),
        ))
    };
    let spec = SpecExpr::and(side("maj", "min"), side("min", "maj"));
    let bindings = BTreeMap::from([
        ("maj".to_string(), bind(&model, majority, &classifier)),
        ("min".to_string(), bind(&model, minority, &classifier)),
    ]);
    FairnessProblem::new(spec, bindings, c)
}

/// `mu(pair) >= 1 - c`, where `pair` indicates that two independent members
/// `V, V'` satisfy `|f(V) - f(V')| <= lambda * |V - V'|_1`.
pub fn individual_fairness(
    c: f64,
    lambda: f64,
    model: Arc<PopulationModel>,
    classifier: Arc<Classifier>,
) -> Result<FairnessProblem, FairnessError> {
    check_c(c)?;
    if !(lambda > 0.0) {
        return Err(FairnessError::InvalidLambda(lambda));
    }
    let mut var = bind(&model, Predicate::Always, &classifier);
    var.pairwise_lambda = Some(lambda);
    let spec = SpecExpr::geq(SpecExpr::mu("pair"), SpecExpr::constant(1.0 - c));
    FairnessProblem::new(spec, BTreeMap::from([("pair".to_string(), var)]), c)
}
