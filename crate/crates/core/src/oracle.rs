//! Exact expectations for small problem instances, used as ground truth.
//!
//! Discrete models are enumerated path by path with exact probabilities.
//! Models mixing discrete choices with gaussian or uniform features are
//! handled in closed form when the classifier is a decision tree and the
//! continuous features are only returned, never computed with.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::classifier::{Classifier, ClassifierError, TreeNode};
use crate::fairness::{FairnessProblem, SampledVariable};
use crate::popmodel::{FeatureRecord, ModelError, Source};
use crate::speclang::SpecError;

/// Tolerance on total path probability before conditioning.
const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactMeans {
    pub means: BTreeMap<String, f64>,
    /// Value of the specification at the exact means.
    pub truth: bool,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("variable `{0}` draws from a continuous distribution")]
    UnsupportedContinuousPrimitive(String),
    #[error("condition of `{0}` has probability zero")]
    ZeroConditionProbability(String),
    #[error("unsupported instance shape: {0}")]
    UnsupportedShape(String),
    #[error("path probabilities of `{variable}` sum to {mass}")]
    MassNotConserved { variable: String, mass: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("specification is undefined at the exact means: {0}")]
    Undefined(#[from] SpecError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Continuous {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Continuous {
    fn cdf(self, x: f64) -> f64 {
        match self {
            Continuous::Normal { mean, sd } => 0.5 * libm::erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2)),
            Continuous::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    fn sf(self, x: f64) -> f64 {
        match self {
            Continuous::Normal { mean, sd } => 0.5 * libm::erfc((x - mean) / (sd * std::f64::consts::SQRT_2)),
            Continuous::Uniform { .. } => 1.0 - self.cdf(x),
        }
    }

    /// Probability of `(lo, hi]`, computed on the tail that keeps precision.
    fn mass(self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let centre = match self {
            Continuous::Normal { mean, .. } => mean,
            Continuous::Uniform { lo, hi } => 0.5 * (lo + hi),
        };
        let m = if lo >= centre {
            self.sf(lo) - self.sf(hi)
        } else {
            self.cdf(hi) - self.cdf(lo)
        };
        m.max(0.0)
    }
}

/// Replays a program along one choice path at a time, depth first.
struct Replay {
    /// Chosen index and the normalized weights at each discrete choice.
    trail: Vec<(usize, Vec<f64>)>,
    pos: usize,
    prob: f64,
    /// `None` rejects continuous draws; otherwise they are recorded by slot.
    symbolic: Option<Vec<(usize, Continuous)>>,
    continuous_hit: bool,
}

impl Replay {
    fn new(symbolic: bool) -> Self {
        Replay {
            trail: Vec::new(),
            pos: 0,
            prob: 1.0,
            symbolic: symbolic.then(Vec::new),
            continuous_hit: false,
        }
    }

    fn restart(&mut self) {
        self.pos = 0;
        self.prob = 1.0;
        if let Some(s) = &mut self.symbolic {
            s.clear();
        }
    }

    fn choose(&mut self, weights: Vec<f64>) -> usize {
        if self.pos == self.trail.len() {
            let first = weights.iter().position(|w| *w > 0.0).expect("checked: some weight positive");
            self.trail.push((first, weights));
        }
        let (c, ws) = &self.trail[self.pos];
        self.prob *= ws[*c];
        self.pos += 1;
        *c
    }

    /// Moves to the next path; false once every path has been visited.
    fn advance(&mut self) -> bool {
        self.trail.truncate(self.pos);
        while let Some((c, ws)) = self.trail.last_mut() {
            if let Some(next) = (*c + 1..ws.len()).find(|&i| ws[i] > 0.0) {
                *c = next;
                return true;
            }
            self.trail.pop();
        }
        false
    }

    fn continuous(&mut self, slot: usize, dist: Continuous) -> Result<f64, ModelError> {
        match &mut self.symbolic {
            Some(s) => {
                s.push((slot, dist));
                Ok(f64::NAN)
            }
            None => {
                self.continuous_hit = true;
                Err(ModelError::InvalidParameter("continuous draw during enumeration".into()))
            }
        }
    }
}

impl Source for Replay {
    fn bernoulli(&mut self, p: f64) -> Result<f64, ModelError> {
        Ok(self.choose(vec![1.0 - p, p]) as f64)
    }

    fn gaussian(&mut self, slot: usize, mean: f64, stddev: f64) -> Result<f64, ModelError> {
        self.continuous(slot, Continuous::Normal { mean, sd: stddev })
    }

    fn uniform(&mut self, slot: usize, lo: f64, hi: f64) -> Result<f64, ModelError> {
        self.continuous(slot, Continuous::Uniform { lo, hi })
    }

    fn categorical(&mut self, weights: &[f64]) -> Result<f64, ModelError> {
        let total: f64 = weights.iter().sum();
        Ok(self.choose(weights.iter().map(|w| w / total).collect()) as f64)
    }
}

/// Enumerates every path of `run`, returning each path's probability, result
/// and the continuous draws it made.
fn enumerate<T>(
    symbolic: bool,
    name: &str,
    mut run: impl FnMut(&mut Replay) -> Result<T, ModelError>,
) -> Result<Vec<(f64, T, Vec<(usize, Continuous)>)>, OracleError> {
    let mut replay = Replay::new(symbolic);
    let mut out = Vec::new();
    loop {
        replay.restart();
        match run(&mut replay) {
            Ok(t) => out.push((replay.prob, t, replay.symbolic.clone().unwrap_or_default())),
            Err(_) if replay.continuous_hit => {
                return Err(OracleError::UnsupportedContinuousPrimitive(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        }
        if !replay.advance() {
            break;
        }
    }
    let mass: f64 = out.iter().map(|(p, ..)| p).sum();
    if (mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(OracleError::MassNotConserved { variable: name.to_string(), mass });
    }
    Ok(out)
}

/// A support point of the conditional distribution: probability, record, and
/// the law of each continuous feature (by name).
type Point = (f64, FeatureRecord, Vec<(String, Continuous)>);

fn conditional_support(name: &str, var: &SampledVariable, symbolic: bool) -> Result<Vec<Point>, OracleError> {
    let model = &var.model;
    let program = model.program();
    let schema = model.schema();
    let capture = var.mediator_override.is_some();
    let paths = enumerate(symbolic, name, |r| program.run(r, capture))?;

    let mut support = Vec::new();
    for (p, run, draws) in paths {
        let record = FeatureRecord::new(schema.clone(), run.values);
        if !var.condition.eval(&record) {
            continue;
        }
        match (&var.mediator_override, run.mediator_entry) {
            (Some(over), Some(entry)) => {
                let resolved = model.resolve_overrides(over)?;
                let slots = program.mediator_slots.as_ref().expect("entry implies a mediator");
                for (q, after, more) in enumerate(symbolic, name, |r| program.rerun_mediator(&entry, &resolved, r))? {
                    let mut merged = record.clone();
                    model.merge_mediator(&mut merged, slots, &after);
                    let mut all = draws.clone();
                    all.extend(more);
                    support.push((p * q, merged, all));
                }
            }
            _ => support.push((p, record, draws)),
        }
    }
    let z: f64 = support.iter().map(|(p, ..)| p).sum();
    if z <= 0.0 {
        return Err(OracleError::ZeroConditionProbability(name.to_string()));
    }
    Ok(support
        .into_iter()
        .filter(|(p, ..)| *p > 0.0)
        .map(|(p, record, draws)| {
            let laws = continuous_features(program, &record, &draws);
            (p / z, record, laws)
        })
        .collect())
}

/// Maps each returned continuous feature to the law of its final draw.
fn continuous_features(
    program: &crate::popmodel::program::Program,
    record: &FeatureRecord,
    draws: &[(usize, Continuous)],
) -> Vec<(String, Continuous)> {
    let mut last: BTreeMap<usize, Continuous> = BTreeMap::new();
    for (slot, d) in draws {
        last.insert(*slot, *d);
    }
    record
        .iter()
        .filter(|(_, v)| v.is_nan())
        .filter_map(|(feature, _)| {
            let slot = program.slots.iter().position(|s| s == feature)?;
            last.get(&slot).map(|d| (feature.to_string(), *d))
        })
        .collect()
}

fn discrete_mean(name: &str, var: &SampledVariable) -> Result<f64, OracleError> {
    let support = conditional_support(name, var, false)?;
    let records: Vec<FeatureRecord> = support.iter().map(|(_, r, _)| r.clone()).collect();
    let scores = var.classifier.evaluate_batch(&records)?;
    let mean = match var.pairwise_lambda {
        None => support.iter().zip(&scores).map(|((p, ..), s)| p * s).sum(),
        Some(lambda) => {
            let mut acc = 0.0;
            for (i, (pi, ri, _)) in support.iter().enumerate() {
                for (j, (pj, rj, _)) in support.iter().enumerate() {
                    if (scores[i] - scores[j]).abs() <= lambda * ri.l1_distance(rj) {
                        acc += pi * pj;
                    }
                }
            }
            acc
        }
    };
    Ok(mean)
}

fn truth(problem: &FairnessProblem, means: &BTreeMap<String, f64>) -> Result<bool, OracleError> {
    Ok(problem
        .spec
        .eval_exact(means)?
        .as_bool()
        .expect("problem specs are boolean"))
}

/// Exact means by enumerating every discrete path of each model.
pub fn exact_means_discrete(problem: &FairnessProblem) -> Result<ExactMeans, OracleError> {
    let mut means = BTreeMap::new();
    for (name, var) in &problem.bindings {
        means.insert(name.clone(), discrete_mean(name, var)?.clamp(0.0, 1.0));
    }
    let truth = truth(problem, &means)?;
    Ok(ExactMeans { means, truth })
}

fn tree_mass(node: &TreeNode, record: &FeatureRecord, laws: &[(String, Continuous)], boxes: &mut Vec<(f64, f64)>) -> Result<f64, OracleError> {
    match node {
        TreeNode::Leaf { leaf } => {
            let mut p = *leaf;
            for ((_, law), (lo, hi)) in laws.iter().zip(boxes.iter()) {
                if p == 0.0 {
                    break;
                }
                p *= law.mass(*lo, *hi);
            }
            Ok(p)
        }
        TreeNode::Split { feature, threshold, le, gt } => {
            if let Some(i) = laws.iter().position(|(f, _)| f == feature) {
                let saved = boxes[i];
                boxes[i].1 = saved.1.min(*threshold);
                let a = tree_mass(le, record, laws, boxes)?;
                boxes[i] = (saved.0.max(*threshold), saved.1);
                let b = tree_mass(gt, record, laws, boxes)?;
                boxes[i] = saved;
                Ok(a + b)
            } else {
                let v = record
                    .get(feature)
                    .ok_or_else(|| ClassifierError::MissingFeature(feature.clone()))?;
                tree_mass(if v <= *threshold { le } else { gt }, record, laws, boxes)
            }
        }
    }
}

fn gaussian_tree_mean(name: &str, var: &SampledVariable) -> Result<f64, OracleError> {
    let Classifier::DecisionTree(root) = var.classifier.as_ref() else {
        return Err(OracleError::UnsupportedShape(format!("`{name}` is not scored by a decision tree")));
    };
    if var.pairwise_lambda.is_some() {
        return Err(OracleError::UnsupportedShape(format!("`{name}` is pairwise")));
    }
    let program = var.model.program();
    let continuous = program.continuous_slots();
    if let Some(slot) = program.slots_read().intersection(&continuous).next() {
        return Err(OracleError::UnsupportedShape(format!(
            "continuous variable `{}` is used in an expression",
            program.slots[*slot]
        )));
    }
    let referenced = var
        .condition
        .referenced()
        .ok_or_else(|| OracleError::UnsupportedShape(format!("condition of `{name}` is opaque")))?;
    let continuous_names: Vec<&String> = continuous.iter().map(|s| &program.slots[*s]).collect();
    if let Some(f) = referenced.iter().find(|f| continuous_names.contains(f)) {
        return Err(OracleError::UnsupportedShape(format!("condition reads continuous feature `{f}`")));
    }

    let mut mean = 0.0;
    for (p, record, laws) in conditional_support(name, var, true)? {
        let mut boxes = vec![(f64::NEG_INFINITY, f64::INFINITY); laws.len()];
        mean += p * tree_mass(root, &record, &laws, &mut boxes)?;
    }
    Ok(mean)
}

/// Exact means for models whose continuous features are independent given
/// the discrete path, scored by a decision tree.
pub fn exact_means_gaussian_tree(problem: &FairnessProblem) -> Result<ExactMeans, OracleError> {
    let mut means = BTreeMap::new();
    for (name, var) in &problem.bindings {
        means.insert(name.clone(), gaussian_tree_mean(name, var)?.clamp(0.0, 1.0));
    }
    let truth = truth(problem, &means)?;
    Ok(ExactMeans { means, truth })
}

/// Discrete enumeration, falling back to the closed form for continuous models.
pub fn exact_means(problem: &FairnessProblem) -> Result<ExactMeans, OracleError> {
    match exact_means_discrete(problem) {
        Err(OracleError::UnsupportedContinuousPrimitive(_)) => exact_means_gaussian_tree(problem),
        other => other,
    }
}
