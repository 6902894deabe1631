//! Python bindings: specifications, population models, classifiers, the
//! fairness builders and the verifier.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use fairverify::classifier::Classifier as CoreClassifier;
use fairverify::cli::{self, VerifyArgs};
use fairverify::fairness::{self, FairnessProblem, ParityForm, SampledVariable};
use fairverify::{Answer, FeatureRecord, PopulationModel, RngStream, SpecExpr, SpecValue, VerifierConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::{json, Value};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

fn record_dict<'py>(py: Python<'py>, r: &FeatureRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in r.iter() {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// A fairness specification.
#[pyclass(name = "Spec", frozen)]
struct Spec(SpecExpr);

#[pymethods]
impl Spec {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        fairverify::parse_spec(text).map(Spec).map_err(value_err)
    }

    fn delta_weight(&self) -> u64 {
        self.0.delta_weight()
    }

    fn free_variables(&self) -> Vec<String> {
        self.0.free_variables().into_iter().collect()
    }

    /// Exact value given the true means: a bool for conditions, a float for terms.
    fn eval<'py>(&self, py: Python<'py>, means: BTreeMap<String, f64>) -> PyResult<Bound<'py, PyAny>> {
        match self.0.eval_exact(&means).map_err(value_err)? {
            SpecValue::Bool(b) => Ok(b.into_pyobject(py)?.to_owned().into_any()),
            SpecValue::Real(x) => Ok(x.into_pyobject(py)?.into_any()),
        }
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Spec({:?})", self.0.to_string())
    }
}

/// A population model program.
#[pyclass(name = "Model", frozen)]
struct Model(Arc<PopulationModel>);

#[pymethods]
impl Model {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        PopulationModel::parse(text).map(|m| Model(Arc::new(m))).map_err(value_err)
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.0.features().to_vec()
    }

    #[getter]
    fn has_mediator(&self) -> bool {
        self.0.has_mediator()
    }

    #[pyo3(signature = (seed=0, index=0))]
    fn sample<'py>(&self, py: Python<'py>, seed: u64, index: u64) -> PyResult<Bound<'py, PyDict>> {
        let r = self.0.sample(&mut RngStream::new(seed, 0, index)).map_err(runtime_err)?;
        record_dict(py, &r)
    }

    /// Returns `(record, attempts)`.
    #[pyo3(signature = (condition, seed=0, index=0, max_attempts=1_000_000))]
    fn rejection_sample<'py>(
        &self,
        py: Python<'py>,
        condition: &str,
        seed: u64,
        index: u64,
        max_attempts: u64,
    ) -> PyResult<(Bound<'py, PyDict>, u64)> {
        let pred = self.0.predicate(condition).map_err(value_err)?;
        let a = self
            .0
            .rejection_sample(&pred, &mut RngStream::new(seed, 0, index), max_attempts)
            .map_err(runtime_err)?;
        Ok((record_dict(py, &a.record)?, a.attempts))
    }
}

/// A classifier mapping feature records to `[0, 1]`.
#[pyclass(name = "Classifier", frozen)]
struct Classifier(Arc<CoreClassifier>);

#[pymethods]
impl Classifier {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CoreClassifier::from_json(text).map(|c| Classifier(Arc::new(c))).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreClassifier::load(&path).map(|c| Classifier(Arc::new(c))).map_err(value_err)
    }

    /// Scores a record by the value of one feature.
    #[staticmethod]
    fn feature(name: &str) -> Self {
        Classifier(Arc::new(CoreClassifier::feature(name)))
    }

    fn evaluate(&self, record: BTreeMap<String, f64>) -> PyResult<f64> {
        let r = FeatureRecord::from_pairs(record.iter().map(|(k, v)| (k.as_str(), *v)));
        self.0.evaluate(&r).map_err(runtime_err)
    }
}

/// A specification together with the variables it samples.
#[pyclass(name = "Problem", frozen)]
struct Problem(FairnessProblem);

fn verdict_json(v: &fairverify::Verdict) -> Value {
    let reason = match v.answer {
        Answer::Undecided(r) => Some(format!("{r:?}")),
        _ => None,
    };
    let vars: serde_json::Map<String, Value> = v
        .per_variable
        .iter()
        .map(|(k, s)| {
            (
                k.clone(),
                json!({
                    "n": s.n,
                    "mean": s.mean.is_finite().then_some(s.mean),
                    "eps": s.eps.is_finite().then_some(s.eps),
                    "accepted": s.accepted,
                    "total": s.total_attempts,
                    "accept_rate": s.accept_rate(),
                }),
            )
        })
        .collect();
    json!({
        "answer": v.answer.as_str(),
        "reason": reason,
        "gamma": v.gamma,
        "iterations": v.iterations,
        "delta_z": v.delta_z,
        "delta_weight": v.delta_weight,
        "wall_time_secs": v.wall_time.as_secs_f64(),
        "variables": vars,
        "detail": v.detail,
    })
}

#[pymethods]
impl Problem {
    /// Explicit spec; `variables` maps each `mu(name)` to
    /// `(model, classifier, condition)`.
    #[new]
    fn new(spec: &str, variables: BTreeMap<String, (PyRef<'_, Model>, PyRef<'_, Classifier>, Option<String>)>) -> PyResult<Self> {
        let spec = fairverify::parse_spec(spec).map_err(value_err)?;
        let mut bindings = BTreeMap::new();
        for (name, (model, clf, cond)) in variables {
            let pred = match cond {
                Some(c) => model.0.predicate(&c).map_err(value_err)?,
                None => fairverify::Predicate::Always,
            };
            bindings.insert(name, SampledVariable::new(model.0.clone(), pred, clf.0.clone()));
        }
        FairnessProblem::new(spec, bindings, 0.0).map(Problem).map_err(value_err)
    }

    #[getter]
    fn spec(&self) -> Spec {
        Spec(self.0.spec.clone())
    }

    #[pyo3(signature = (delta=1e-5, batch=1, seed=0, max_samples=Some(100_000_000), timeout_secs=None))]
    fn verify<'py>(
        &self,
        py: Python<'py>,
        delta: f64,
        batch: usize,
        seed: u64,
        max_samples: Option<u64>,
        timeout_secs: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = VerifierConfig {
            delta,
            batch_size: batch,
            seed,
            max_samples,
            timeout: timeout_secs.map(Duration::from_secs_f64),
            ..Default::default()
        };
        let problem = &self.0;
        let v = py
            .detach(|| fairverify::verify(problem, &cfg))
            .map_err(runtime_err)?;
        to_py(py, &verdict_json(&v))
    }

    /// Exact means and ground truth for enumerable instances.
    fn exact_means<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let e = fairverify::exact_means(&self.0).map_err(value_err)?;
        to_py(py, &json!({ "means": e.means, "truth": e.truth }))
    }
}

fn form(text: &str) -> PyResult<ParityForm> {
    match text {
        "ratio" => Ok(ParityForm::Ratio),
        "difference" => Ok(ParityForm::Difference),
        other => Err(PyValueError::new_err(format!("unknown form `{other}`"))),
    }
}

fn pred(model: &Model, text: &str) -> PyResult<fairverify::Predicate> {
    model.0.predicate(text).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (c, majority, minority, model, classifier, form="ratio"))]
fn demographic_parity(c: f64, majority: &str, minority: &str, model: &Model, classifier: &Classifier, form: &str) -> PyResult<Problem> {
    fairness::demographic_parity(
        c,
        pred(model, majority)?,
        pred(model, minority)?,
        model.0.clone(),
        classifier.0.clone(),
        self::form(form)?,
    )
    .map(Problem)
    .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (c, majority, minority, qualified, model, classifier, form="ratio"))]
fn equal_opportunity(
    c: f64,
    majority: &str,
    minority: &str,
    qualified: &str,
    model: &Model,
    classifier: &Classifier,
    form: &str,
) -> PyResult<Problem> {
    fairness::equal_opportunity(
        c,
        pred(model, majority)?,
        pred(model, minority)?,
        pred(model, qualified)?,
        model.0.clone(),
        classifier.0.clone(),
        self::form(form)?,
    )
    .map(Problem)
    .map_err(value_err)
}

#[pyfunction]
fn path_specific(
    c: f64,
    majority: &str,
    minority: &str,
    as_majority: BTreeMap<String, f64>,
    model: &Model,
    classifier: &Classifier,
) -> PyResult<Problem> {
    fairness::path_specific(
        c,
        pred(model, majority)?,
        pred(model, minority)?,
        as_majority,
        model.0.clone(),
        classifier.0.clone(),
    )
    .map(Problem)
    .map_err(value_err)
}

#[pyfunction]
fn group_parity(c: f64, majority: &str, minorities: BTreeMap<String, String>, model: &Model, classifier: &Classifier) -> PyResult<Problem> {
    let groups = minorities
        .iter()
        .map(|(name, text)| Ok((name.clone(), pred(model, text)?)))
        .collect::<PyResult<Vec<_>>>()?;
    fairness::group_parity(c, pred(model, majority)?, groups, model.0.clone(), classifier.0.clone())
        .map(Problem)
        .map_err(value_err)
}

#[pyfunction]
fn regression_parity(c: f64, majority: &str, minority: &str, model: &Model, classifier: &Classifier) -> PyResult<Problem> {
    fairness::regression_parity(c, pred(model, majority)?, pred(model, minority)?, model.0.clone(), classifier.0.clone())
        .map(Problem)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (c, model, classifier, lam=1.0))]
fn individual_fairness(c: f64, model: &Model, classifier: &Classifier, lam: f64) -> PyResult<Problem> {
    fairness::individual_fairness(c, lam, model.0.clone(), classifier.0.clone())
        .map(Problem)
        .map_err(value_err)
}

#[pyfunction]
fn parse_spec(text: &str) -> PyResult<Spec> {
    Spec::new(text)
}

#[pyfunction]
fn epsilon(delta: f64, n: u64) -> PyResult<f64> {
    fairverify::epsilon(delta, n).map_err(value_err)
}

#[pyfunction]
fn hoeffding_epsilon(delta: f64, n: u64) -> PyResult<f64> {
    fairverify::hoeffding_epsilon(delta, n).map_err(value_err)
}

/// Runs a bundle file like the command-line tool and returns the report.
#[pyfunction]
#[pyo3(signature = (path, oracle=false, delta=None, c=None, batch=None, seed=None, max_samples=None))]
fn run_bundle<'py>(
    py: Python<'py>,
    path: PathBuf,
    oracle: bool,
    delta: Option<f64>,
    c: Option<f64>,
    batch: Option<usize>,
    seed: Option<u64>,
    max_samples: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let args = VerifyArgs { bundle: path.clone(), delta, c, batch, seed, max_samples, ..Default::default() };
    let bundle = cli::load_bundle(&path, &args).map_err(value_err)?;
    let report = py.detach(|| cli::run_bundle(&bundle, oracle));
    py.import("json")?.call_method1("loads", (report.to_json(),))
}

#[pymodule]
fn fairverify_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Spec>()?;
    m.add_class::<Model>()?;
    m.add_class::<Classifier>()?;
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(parse_spec, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(hoeffding_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(demographic_parity, m)?)?;
    m.add_function(wrap_pyfunction!(equal_opportunity, m)?)?;
    m.add_function(wrap_pyfunction!(path_specific, m)?)?;
    m.add_function(wrap_pyfunction!(group_parity, m)?)?;
    m.add_function(wrap_pyfunction!(regression_parity, m)?)?;
    m.add_function(wrap_pyfunction!(individual_fairness, m)?)?;
    m.add_function(wrap_pyfunction!(run_bundle, m)?)?;
    Ok(())
}
