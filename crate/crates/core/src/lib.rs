//! Statistical verification of fairness specifications for blackbox
//! classifiers over probabilistic population models.
//!
//! A [`fairness::FairnessProblem`] pairs a boolean specification over
//! expectations `mu(x)` with the sampled variables those expectations refer
//! to. [`verifier::verify`] samples adaptively until the specification is
//! decided with the requested confidence.

mod lex;

pub mod classifier;
pub mod cli;
pub mod concentration;
pub mod fairness;
pub mod inference;
pub mod oracle;
pub mod popmodel;
pub mod speclang;
pub mod verifier;

pub use classifier::{Classifier, ClassifierError};
pub use concentration::{epsilon, hoeffding_epsilon, EstimatorState};
pub use fairness::{FairnessError, FairnessProblem, ParityForm, SampledVariable};
pub use inference::{infer, BoolLemma, EstimateLemma, Inference, LemmaEnv};
pub use popmodel::{FeatureRecord, ModelError, PopulationModel, Predicate, RngStream};
pub use speclang::{parse_spec, SpecError, SpecExpr, SpecValue};
pub use verifier::{verify, Answer, UndecidedReason, Verdict, VerifierConfig, VerifyError};
pub use oracle::{exact_means, exact_means_discrete, exact_means_gaussian_tree, ExactMeans, OracleError};
