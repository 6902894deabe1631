//! Blackbox classifiers mapping a [`FeatureRecord`] to a value in `[0, 1]`.
//!
//! Built-in models are described in JSON:
//!
//! ```json
//! {"kind": "tree", "root": {"feature": "col_rank", "threshold": 5,
//!                           "le": {"leaf": 1},
//!                           "gt": {"feature": "years_exp", "threshold": 5,
//!                                  "le": {"leaf": 0}, "gt": {"leaf": 1}}}}
//! {"kind": "linear", "features": ["a", "b"], "weights": [1, -1], "bias": 0}
//! {"kind": "net", "features": ["a", "b"], "layers": [{"weights": [[1, 0], [0, 1]], "bias": [0, 0]},
//!                                               {"weights": [[1, -1]], "bias": [0]}]}
//! {"kind": "feature", "name": "z"}
//! {"kind": "external", "command": ["python3", "clf.py"]}
//! ```
//!
//! Linear models and nets take an `"output"` of `"threshold"` (default,
//! `1[score >= 0]`), `"clamp"` (score clipped to `[0, 1]`) or `"logistic"`.

mod external;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::popmodel::FeatureRecord;

pub use external::ExternalClassifier;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("feature `{0}` is missing from the record")]
    MissingFeature(String),
    #[error("external classifier protocol error: {0}")]
    ExternalProtocol(String),
    #[error("invalid classifier description: {0}")]
    Invalid(String),
    #[error("output {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("cannot read classifier file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// `1[score >= 0]`.
    #[default]
    Threshold,
    Clamp,
    Logistic,
}

impl OutputMode {
    fn apply(self, score: f64) -> f64 {
        match self {
            OutputMode::Threshold => {
                if score >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            OutputMode::Clamp => score.clamp(0.0, 1.0),
            OutputMode::Logistic => 1.0 / (1.0 + (-score).exp()),
        }
    }
}

/// Axis-aligned decision tree node. Records with `feature <= threshold` go
/// to `le`, others to `gt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Leaf {
        leaf: f64,
    },
    Split {
        feature: String,
        threshold: f64,
        le: Box<TreeNode>,
        gt: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn leaf(value: f64) -> Self {
        TreeNode::Leaf { leaf: value }
    }

    pub fn split(feature: impl Into<String>, threshold: f64, le: TreeNode, gt: TreeNode) -> Self {
        TreeNode::Split {
            feature: feature.into(),
            threshold,
            le: Box::new(le),
            gt: Box::new(gt),
        }
    }

    fn eval(&self, x: &FeatureRecord) -> Result<f64, ClassifierError> {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { leaf } => return Ok(*leaf),
                TreeNode::Split { feature, threshold, le, gt } => {
                    let v = x
                        .get(feature)
                        .ok_or_else(|| ClassifierError::MissingFeature(feature.clone()))?;
                    node = if v <= *threshold { le } else { gt };
                }
            }
        }
    }

    fn validate(&self) -> Result<(), ClassifierError> {
        match self {
            TreeNode::Leaf { leaf } if (0.0..=1.0).contains(leaf) => Ok(()),
            TreeNode::Leaf { leaf } => Err(ClassifierError::Invalid(format!("leaf value {leaf} is outside [0, 1]"))),
            TreeNode::Split { threshold, le, gt, .. } => {
                if threshold.is_nan() {
                    return Err(ClassifierError::Invalid("NaN threshold".into()));
                }
                le.validate()?;
                gt.validate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `weights[j][i]`: input `i` to output `j`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierSpec {
    Tree {
        root: TreeNode,
    },
    Linear {
        features: Vec<String>,
        weights: Vec<f64>,
        bias: f64,
        #[serde(default)]
        output: OutputMode,
    },
    Net {
        features: Vec<String>,
        layers: Vec<Layer>,
        #[serde(default)]
        output: OutputMode,
    },
    /// The value of one feature, which must lie in `[0, 1]`.
    Feature {
        name: String,
    },
    External {
        command: Vec<String>,
        /// Features sent to the process; all record features when absent.
        #[serde(default)]
        features: Option<Vec<String>>,
    },
}

#[derive(Debug)]
pub enum Classifier {
    DecisionTree(TreeNode),
    Linear {
        features: Vec<String>,
        weights: Vec<f64>,
        bias: f64,
        output: OutputMode,
    },
    FeedForward {
        features: Vec<String>,
        layers: Vec<Layer>,
        output: OutputMode,
    },
    Feature(String),
    External(ExternalClassifier),
}

fn gather(features: &[String], x: &FeatureRecord) -> Result<Vec<f64>, ClassifierError> {
    features
        .iter()
        .map(|f| x.get(f).ok_or_else(|| ClassifierError::MissingFeature(f.clone())))
        .collect()
}

impl Classifier {
    pub fn tree(root: TreeNode) -> Result<Self, ClassifierError> {
        Classifier::from_spec(ClassifierSpec::Tree { root })
    }

    pub fn linear(features: &[&str], weights: &[f64], bias: f64, output: OutputMode) -> Result<Self, ClassifierError> {
        Classifier::from_spec(ClassifierSpec::Linear {
            features: features.iter().map(|s| s.to_string()).collect(),
            weights: weights.to_vec(),
            bias,
            output,
        })
    }

    pub fn feature(name: impl Into<String>) -> Self {
        Classifier::Feature(name.into())
    }

    pub fn from_spec(spec: ClassifierSpec) -> Result<Self, ClassifierError> {
        Ok(match spec {
            ClassifierSpec::Tree { root } => {
                root.validate()?;
                Classifier::DecisionTree(root)
            }
            ClassifierSpec::Linear { features, weights, bias, output } => {
                if features.len() != weights.len() {
                    return Err(ClassifierError::Invalid(format!(
                        "{} features but {} weights",
                        features.len(),
                        weights.len()
                    )));
                }
                Classifier::Linear { features, weights, bias, output }
            }
            ClassifierSpec::Net { features, layers, output } => {
                let mut width = features.len();
                for (k, layer) in layers.iter().enumerate() {
                    if layer.weights.len() != layer.bias.len() || layer.weights.iter().any(|row| row.len() != width) {
                        return Err(ClassifierError::Invalid(format!("layer {k} does not match input width {width}")));
                    }
                    width = layer.bias.len();
                }
                if layers.is_empty() || width != 1 {
                    return Err(ClassifierError::Invalid("network must end in a single output".into()));
                }
                Classifier::FeedForward { features, layers, output }
            }
            ClassifierSpec::Feature { name } => Classifier::Feature(name),
            ClassifierSpec::External { command, features } => {
                Classifier::External(ExternalClassifier::spawn(&command, features)?)
            }
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let spec: ClassifierSpec =
            serde_json::from_str(text).map_err(|e| ClassifierError::Invalid(e.to_string()))?;
        Classifier::from_spec(spec)
    }

    /// Loads a JSON description. Relative external commands resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path).map_err(|source| ClassifierError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec: ClassifierSpec =
            serde_json::from_str(&text).map_err(|e| ClassifierError::Invalid(format!("{}: {e}", path.display())))?;
        if let ClassifierSpec::External { command, .. } = &mut spec {
            let dir = path.parent().unwrap_or(Path::new("."));
            for arg in command.iter_mut().skip(1) {
                let candidate = dir.join(&*arg);
                if candidate.is_file() {
                    *arg = candidate.display().to_string();
                }
            }
        }
        Classifier::from_spec(spec)
    }

    /// True when outputs are always 0 or 1.
    pub fn is_binary(&self) -> bool {
        match self {
            Classifier::DecisionTree(root) => {
                fn binary(n: &TreeNode) -> bool {
                    match n {
                        TreeNode::Leaf { leaf } => *leaf == 0.0 || *leaf == 1.0,
                        TreeNode::Split { le, gt, .. } => binary(le) && binary(gt),
                    }
                }
                binary(root)
            }
            Classifier::Linear { output, .. } | Classifier::FeedForward { output, .. } => {
                *output == OutputMode::Threshold
            }
            Classifier::Feature(_) | Classifier::External(_) => false,
        }
    }

    pub fn evaluate(&self, x: &FeatureRecord) -> Result<f64, ClassifierError> {
        let out = match self {
            Classifier::DecisionTree(root) => root.eval(x)?,
            Classifier::Linear { features, weights, bias, output } => {
                let xs = gather(features, x)?;
                let score = weights.iter().zip(&xs).map(|(w, v)| w * v).sum::<f64>() + bias;
                output.apply(score)
            }
            Classifier::FeedForward { features, layers, output } => {
                let mut h = gather(features, x)?;
                for (k, layer) in layers.iter().enumerate() {
                    let last = k + 1 == layers.len();
                    h = layer
                        .weights
                        .iter()
                        .zip(&layer.bias)
                        .map(|(row, b)| {
                            let z = row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b;
                            if last {
                                z
                            } else {
                                z.max(0.0)
                            }
                        })
                        .collect();
                }
                output.apply(h[0])
            }
            Classifier::Feature(name) => x.get(name).ok_or_else(|| ClassifierError::MissingFeature(name.clone()))?,
            Classifier::External(ext) => return ext.evaluate_batch(std::slice::from_ref(x)).map(|v| v[0]),
        };
        if !(0.0..=1.0).contains(&out) {
            return Err(ClassifierError::OutOfRange(out));
        }
        Ok(out)
    }

    /// Evaluates records in order. External classifiers receive the whole
    /// batch in one round trip.
    pub fn evaluate_batch(&self, xs: &[FeatureRecord]) -> Result<Vec<f64>, ClassifierError> {
        match self {
            Classifier::External(ext) => ext.evaluate_batch(xs),
            _ => xs.iter().map(|x| self.evaluate(x)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job_tree() -> Classifier {
        Classifier::tree(TreeNode::split(
            "col_rank",
            5.0,
            TreeNode::leaf(1.0),
            TreeNode::split("years_exp", 5.0, TreeNode::leaf(0.0), TreeNode::leaf(1.0)),
        ))
        .unwrap()
    }

    fn rec(pairs: &[(&str, f64)]) -> FeatureRecord {
        FeatureRecord::from_pairs(pairs.iter().copied())
    }

    #[test]
    fn job_tree_examples() {
        let f = job_tree();
        assert!(f.is_binary());
        assert_eq!(f.evaluate(&rec(&[("col_rank", 3.0), ("years_exp", 0.0)])).unwrap(), 1.0);
        assert_eq!(f.evaluate(&rec(&[("col_rank", 10.0), ("years_exp", 6.0)])).unwrap(), 1.0);
        assert_eq!(f.evaluate(&rec(&[("col_rank", 10.0), ("years_exp", 2.0)])).unwrap(), 0.0);
        assert!(matches!(
            f.evaluate(&rec(&[("col_rank", 10.0)])),
            Err(ClassifierError::MissingFeature(n)) if n == "years_exp"
        ));
    }

    #[test]
    fn tree_json_matches_builder() {
        let json = r#"{"kind": "tree", "root": {"feature": "col_rank", "threshold": 5,
            "le": {"leaf": 1},
            "gt": {"feature": "years_exp", "threshold": 5, "le": {"leaf": 0}, "gt": {"leaf": 1}}}}"#;
        match (Classifier::from_json(json).unwrap(), job_tree()) {
            (Classifier::DecisionTree(a), Classifier::DecisionTree(b)) => assert_eq!(a, b),
            _ => panic!(),
        }
        assert!(Classifier::from_json(r#"{"kind": "tree", "root": {"leaf": 2}}"#).is_err());
    }

    #[test]
    fn linear_threshold_boundary() {
        let f = Classifier::linear(&["a", "b"], &[1.0, -1.0], 0.0, OutputMode::Threshold).unwrap();
        assert_eq!(f.evaluate(&rec(&[("a", 0.3), ("b", 0.3)])).unwrap(), 1.0);
        assert_eq!(f.evaluate(&rec(&[("a", 0.2), ("b", 0.3)])).unwrap(), 0.0);
        assert!(Classifier::linear(&["a"], &[1.0, 2.0], 0.0, OutputMode::Threshold).is_err());
    }

    #[test]
    fn real_valued_outputs() {
        let clamp = Classifier::linear(&["a"], &[2.0], 0.0, OutputMode::Clamp).unwrap();
        assert_eq!(clamp.evaluate(&rec(&[("a", 0.2)])).unwrap(), 0.4);
        assert_eq!(clamp.evaluate(&rec(&[("a", 0.9)])).unwrap(), 1.0);
        let logistic = Classifier::linear(&["a"], &[1.0], 0.0, OutputMode::Logistic).unwrap();
        assert_eq!(logistic.evaluate(&rec(&[("a", 0.0)])).unwrap(), 0.5);
        assert!(!logistic.is_binary());
    }

    #[test]
    fn feedforward_net() {
        // relu(a - b) - relu(b - a) >= 0  <=>  a >= b
        let json = r#"{"kind": "net", "features": ["a", "b"], "layers": [
            {"weights": [[1, -1], [-1, 1]], "bias": [0, 0]},
            {"weights": [[1, -1]], "bias": [0]}]}"#;
        let f = Classifier::from_json(json).unwrap();
        assert_eq!(f.evaluate(&rec(&[("a", 0.7), ("b", 0.2)])).unwrap(), 1.0);
        assert_eq!(f.evaluate(&rec(&[("a", 0.1), ("b", 0.2)])).unwrap(), 0.0);
        let bad = r#"{"kind": "net", "features": ["a"], "layers": [{"weights": [[1, 1]], "bias": [0]}]}"#;
        assert!(Classifier::from_json(bad).is_err());
    }

    #[test]
    fn feature_classifier_range() {
        let f = Classifier::feature("z");
        assert_eq!(f.evaluate(&rec(&[("z", 1.0)])).unwrap(), 1.0);
        assert!(matches!(f.evaluate(&rec(&[("z", 2.0)])), Err(ClassifierError::OutOfRange(_))));
    }

    #[test]
    fn batch_agrees_with_single() {
        let f = job_tree();
        let xs: Vec<FeatureRecord> = (0..50)
            .map(|i| rec(&[("col_rank", (i % 13) as f64), ("years_exp", (i % 7) as f64)]))
            .collect();
        let batch = f.evaluate_batch(&xs).unwrap();
        for (x, y) in xs.iter().zip(batch) {
            assert_eq!(f.evaluate(x).unwrap(), y);
        }
    }

    /// Depth-first enumeration of root-to-leaf paths as interval boxes, then
    /// lookup of the box containing each point.
    fn path_oracle(root: &TreeNode, x: &FeatureRecord) -> f64 {
        fn paths(n: &TreeNode, bounds: Vec<(String, f64, f64)>, out: &mut Vec<(Vec<(String, f64, f64)>, f64)>) {
            match n {
                TreeNode::Leaf { leaf } => out.push((bounds, *leaf)),
                TreeNode::Split { feature, threshold, le, gt } => {
                    let mut l = bounds.clone();
                    l.push((feature.clone(), f64::NEG_INFINITY, *threshold));
                    paths(le, l, out);
                    let mut r = bounds;
                    r.push((feature.clone(), *threshold, f64::INFINITY));
                    paths(gt, r, out);
                }
            }
        }
        let mut all = Vec::new();
        paths(root, Vec::new(), &mut all);
        let hits: Vec<f64> = all
            .iter()
            .filter(|(b, _)| {
                b.iter().all(|(f, lo, hi)| {
                    let v = x.get(f).unwrap();
                    v > *lo && v <= *hi
                })
            })
            .map(|(_, v)| *v)
            .collect();
        assert_eq!(hits.len(), 1);
        hits[0]
    }

    proptest::proptest! {
        #[test]
        fn tree_matches_path_enumeration(seed in 0u64..10_000, a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
            let mut rng = crate::popmodel::RngStream::new(seed, 0, 0);
            fn build(rng: &mut crate::popmodel::RngStream, depth: usize) -> TreeNode {
                if depth == 0 || rng.uniform() < 0.2 {
                    return TreeNode::leaf(if rng.bernoulli(0.5) { 1.0 } else { 0.0 });
                }
                let f = ["a", "b", "c"][rng.categorical(&[1.0, 1.0, 1.0])];
                let t = rng.uniform_range(-5.0, 5.0).round();
                TreeNode::split(f, t, build(rng, depth - 1), build(rng, depth - 1))
            }
            let root = build(&mut rng, 5);
            let x = rec(&[("a", a.round()), ("b", b), ("c", c)]);
            let f = Classifier::tree(root.clone()).unwrap();
            proptest::prop_assert_eq!(f.evaluate(&x).unwrap(), path_oracle(&root, &x));
        }
    }
}
