//! Adaptive sampling loop: draw a batch for every variable, bound each mean,
//! run inference, and stop once the specification is decided with failure
//! mass at most `delta`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{Classifier, ClassifierError};
use crate::concentration::{epsilon, EstimatorState};
use crate::fairness::{FairnessProblem, SampledVariable};
use crate::inference::{infer, uniform_failure_mass, EstimateLemma, Inference, LemmaEnv};
use crate::popmodel::{ModelError, RngStream};

/// Batches at least this large are sampled on the rayon pool.
const PARALLEL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierConfig {
    pub delta: f64,
    pub batch_size: usize,
    /// Per-variable sample ceiling; `None` means unlimited.
    pub max_samples: Option<u64>,
    pub timeout: Option<Duration>,
    pub seed: u64,
    pub rejection_max_attempts: u64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            delta: 1e-5,
            batch_size: 1,
            max_samples: Some(100_000_000),
            timeout: None,
            seed: 0,
            rejection_max_attempts: crate::popmodel::DEFAULT_MAX_ATTEMPTS,
        }
    }
}

impl VerifierConfig {
    pub fn with_delta(delta: f64) -> Self {
        VerifierConfig { delta, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(VerifyError::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.batch_size == 0 {
            return Err(VerifyError::Config("batch size must be at least 1".into()));
        }
        if self.rejection_max_attempts == 0 {
            return Err(VerifyError::Config("rejection attempts must be at least 1".into()));
        }
        if self.max_samples == Some(0) {
            return Err(VerifyError::Config("sample cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model error in `{variable}`: {source}")]
    Model { variable: String, source: ModelError },
    #[error("classifier error in `{variable}`: {source}")]
    Classifier { variable: String, source: ClassifierError },
    #[error("variable `{variable}`: {message}")]
    Sample { variable: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UndecidedReason {
    SampleCap,
    Timeout,
    RejectionExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Fair,
    Unfair,
    Undecided(UndecidedReason),
}

impl Answer {
    pub fn is_decided(self) -> bool {
        !matches!(self, Answer::Undecided(_))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Fair => "fair",
            Answer::Unfair => "unfair",
            Answer::Undecided(_) => "undecided",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableStats {
    pub n: u64,
    pub mean: f64,
    /// Radius at the last check.
    pub eps: f64,
    /// Records accepted by rejection (two per sample for pairwise variables).
    pub accepted: u64,
    pub total_attempts: u64,
}

impl VariableStats {
    pub fn accept_rate(&self) -> f64 {
        if self.total_attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.total_attempts as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub answer: Answer,
    /// Failure mass of the final inference; `None` if never decided.
    pub gamma: Option<f64>,
    /// Number of inference checks performed (the stopping time).
    pub iterations: u64,
    pub per_variable: BTreeMap<String, VariableStats>,
    pub delta_z: f64,
    pub delta_weight: u64,
    pub wall_time: Duration,
    /// Why the last check did not decide, or which variable exhausted rejection.
    pub detail: Option<String>,
}

/// Per-leaf confidence `delta / weight`, nudged down until the summed
/// failure mass of the spec does not exceed `delta` in floating point.
pub fn leaf_delta(spec: &crate::speclang::SpecExpr, delta: f64) -> f64 {
    let m = spec.delta_weight();
    if m == 0 {
        return delta;
    }
    let mut dz = delta / m as f64;
    while uniform_failure_mass(spec, dz) > delta {
        dz = dz.next_down();
    }
    dz
}

struct Outcome {
    value: f64,
    accepted: u64,
    attempts: u64,
}

enum DrawError {
    Model(ModelError),
    Classifier(ClassifierError),
}

fn draw_record(
    var: &SampledVariable,
    rng: &mut RngStream,
    max_attempts: u64,
) -> Result<crate::popmodel::Accepted, ModelError> {
    match &var.mediator_override {
        Some(over) => var
            .model
            .sample_with_mediator_override(&var.condition, over, rng, max_attempts),
        None => var.model.rejection_sample(&var.condition, rng, max_attempts),
    }
}

/// Draws and scores sample `index` of variable `vi`.
fn draw_one(var: &SampledVariable, seed: u64, vi: u64, index: u64, max_attempts: u64) -> Result<Outcome, DrawError> {
    let mut rng = RngStream::new(seed, vi, index);
    let a = draw_record(var, &mut rng, max_attempts).map_err(DrawError::Model)?;
    match var.pairwise_lambda {
        None => {
            let value = var.classifier.evaluate(&a.record).map_err(DrawError::Classifier)?;
            Ok(Outcome { value, accepted: 1, attempts: a.attempts })
        }
        Some(lambda) => {
            let b = draw_record(var, &mut rng, max_attempts).map_err(DrawError::Model)?;
            let out = var
                .classifier
                .evaluate_batch(&[a.record.clone(), b.record.clone()])
                .map_err(DrawError::Classifier)?;
            let value = pairwise_indicator(out[0], out[1], lambda, a.record.l1_distance(&b.record));
            Ok(Outcome { value, accepted: 2, attempts: a.attempts + b.attempts })
        }
    }
}

fn pairwise_indicator(fa: f64, fb: f64, lambda: f64, dist: f64) -> f64 {
    if (fa - fb).abs() <= lambda * dist {
        1.0
    } else {
        0.0
    }
}

/// Draws samples `start..start+count` of one variable, in index order.
fn draw_batch(
    var: &SampledVariable,
    seed: u64,
    vi: u64,
    start: u64,
    count: usize,
    max_attempts: u64,
) -> Result<Vec<Outcome>, DrawError> {
    let external = matches!(*var.classifier, Classifier::External(_));
    if external {
        // Draw every record first, then send them in one exchange.
        let mut records = Vec::with_capacity(count);
        let mut meta = Vec::with_capacity(count);
        for k in 0..count as u64 {
            let mut rng = RngStream::new(seed, vi, start + k);
            let a = draw_record(var, &mut rng, max_attempts).map_err(DrawError::Model)?;
            records.push(a.record);
            let mut attempts = a.attempts;
            if var.pairwise_lambda.is_some() {
                let b = draw_record(var, &mut rng, max_attempts).map_err(DrawError::Model)?;
                attempts += b.attempts;
                records.push(b.record);
            }
            meta.push(attempts);
        }
        let scores = var.classifier.evaluate_batch(&records).map_err(DrawError::Classifier)?;
        return Ok(match var.pairwise_lambda {
            None => scores
                .into_iter()
                .zip(meta)
                .map(|(value, attempts)| Outcome { value, accepted: 1, attempts })
                .collect(),
            Some(lambda) => meta
                .into_iter()
                .enumerate()
                .map(|(k, attempts)| {
                    let d = records[2 * k].l1_distance(&records[2 * k + 1]);
                    Outcome {
                        value: pairwise_indicator(scores[2 * k], scores[2 * k + 1], lambda, d),
                        accepted: 2,
                        attempts,
                    }
                })
                .collect(),
        });
    }
    if count >= PARALLEL_BATCH {
        (0..count as u64)
            .into_par_iter()
            .map(|k| draw_one(var, seed, vi, start + k, max_attempts))
            .collect()
    } else {
        (0..count as u64)
            .map(|k| draw_one(var, seed, vi, start + k, max_attempts))
            .collect()
    }
}

struct Tracked {
    est: EstimatorState,
    accepted: u64,
    attempts: u64,
    eps: f64,
}

/// Runs the sampling loop until the specification is decided or a cap is hit.
pub fn verify(problem: &FairnessProblem, config: &VerifierConfig) -> Result<Verdict, VerifyError> {
    config.validate()?;
    let start = Instant::now();
    let spec = &problem.spec;
    let weight = spec.delta_weight();
    let delta_z = leaf_delta(spec, config.delta);
    let names: Vec<&String> = problem.bindings.keys().collect();
    let mut tracked: Vec<Tracked> = names
        .iter()
        .map(|n| Tracked {
            est: EstimatorState::new(n.as_str()),
            accepted: 0,
            attempts: 0,
            eps: f64::INFINITY,
        })
        .collect();

    let finish = |answer: Answer, gamma: Option<f64>, iterations: u64, tracked: &[Tracked], detail: Option<String>| {
        let per_variable = names
            .iter()
            .zip(tracked)
            .map(|(name, t)| {
                (
                    (*name).clone(),
                    VariableStats {
                        n: t.est.count(),
                        mean: t.est.mean().unwrap_or(f64::NAN),
                        eps: t.eps,
                        accepted: t.accepted,
                        total_attempts: t.attempts,
                    },
                )
            })
            .collect();
        Verdict {
            answer,
            gamma,
            iterations,
            per_variable,
            delta_z,
            delta_weight: weight,
            wall_time: start.elapsed(),
            detail,
        }
    };

    let mut iterations = 0u64;
    let mut detail = None;
    loop {
        if !names.is_empty() {
            let n = tracked[0].est.count();
            let mut count = config.batch_size as u64;
            if let Some(cap) = config.max_samples {
                if n >= cap {
                    return Ok(finish(Answer::Undecided(UndecidedReason::SampleCap), None, iterations, &tracked, detail));
                }
                count = count.min(cap - n);
            }
            if let Some(limit) = config.timeout {
                if start.elapsed() >= limit {
                    return Ok(finish(Answer::Undecided(UndecidedReason::Timeout), None, iterations, &tracked, detail));
                }
            }
            for (vi, (name, t)) in names.iter().zip(tracked.iter_mut()).enumerate() {
                let var = &problem.bindings[*name];
                let outcomes = match draw_batch(var, config.seed, vi as u64, n, count as usize, config.rejection_max_attempts) {
                    Ok(o) => o,
                    Err(DrawError::Model(ModelError::RejectionExhausted { attempts })) => {
                        t.attempts += attempts;
                        let why = format!("`{name}`: condition not satisfied after {attempts} attempts");
                        return Ok(finish(
                            Answer::Undecided(UndecidedReason::RejectionExhausted),
                            None,
                            iterations,
                            &tracked,
                            Some(why),
                        ));
                    }
                    Err(DrawError::Model(source)) => {
                        return Err(VerifyError::Model { variable: (*name).clone(), source })
                    }
                    Err(DrawError::Classifier(source)) => {
                        return Err(VerifyError::Classifier { variable: (*name).clone(), source })
                    }
                };
                for o in outcomes {
                    t.est.update(o.value).map_err(|e| VerifyError::Sample {
                        variable: (*name).clone(),
                        message: e.to_string(),
                    })?;
                    t.accepted += o.accepted;
                    t.attempts += o.attempts;
                }
            }
        }

        iterations += 1;
        let mut env = LemmaEnv::new();
        for (name, t) in names.iter().zip(tracked.iter_mut()) {
            t.eps = epsilon(delta_z, t.est.count()).map_err(|e| VerifyError::Sample {
                variable: (*name).clone(),
                message: e.to_string(),
            })?;
            env.insert((*name).clone(), EstimateLemma::new(t.est.mean().unwrap_or(0.0), t.eps, delta_z));
        }
        match infer(spec, &env).expect("bindings cover the spec") {
            Inference::Bool(lemma) if lemma.gamma <= config.delta => {
                let answer = if lemma.value { Answer::Fair } else { Answer::Unfair };
                return Ok(finish(answer, Some(lemma.gamma), iterations, &tracked, None));
            }
            Inference::Undetermined(u) => detail = Some(u.to_string()),
            other => detail = Some(format!("inference did not decide: {other:?}")),
        }
    }
}
