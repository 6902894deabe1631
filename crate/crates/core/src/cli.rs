//! Command-line front end.
//!
//! `fairverify verify --bundle problem.toml` loads a problem bundle, runs the
//! verifier (or the exact oracle with `--oracle`) and prints a JSON report.
//!
//! Exit status: 0 fair, 1 unfair, 2 undecided, 64 usage or bundle error,
//! 70 failure during verification (details in the report).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Classifier;
use crate::fairness::{self, FairnessProblem, ParityForm, SampledVariable};
use crate::oracle;
use crate::popmodel::{PopulationModel, Predicate};
use crate::speclang::parse_spec;
use crate::verifier::{self, Answer, UndecidedReason, VerifierConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const EXIT_FAIR: i32 = 0;
pub const EXIT_UNFAIR: i32 = 1;
pub const EXIT_UNDECIDED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_RUNTIME: i32 = 70;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Parser)]
#[command(name = "fairverify", version, about = "Verify fairness specifications of blackbox classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify the problem described by a bundle file.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    /// Problem bundle (TOML).
    #[arg(long)]
    pub bundle: PathBuf,
    /// Allowed probability of a wrong answer [default: 1e-5].
    #[arg(long)]
    pub delta: Option<f64>,
    /// Fairness threshold, for builder bundles.
    #[arg(long)]
    pub c: Option<f64>,
    /// Samples per variable between checks [default: 1].
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-variable sample cap; 0 means unlimited [default: 1e8].
    #[arg(long)]
    pub max_samples: Option<u64>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    /// Compute exact means instead of sampling.
    #[arg(long)]
    pub oracle: bool,
    /// Also write the report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    model: Option<String>,
    classifier: Option<String>,
    c: Option<f64>,
    delta: Option<f64>,
    seed: Option<u64>,
    batch: Option<usize>,
    max_samples: Option<u64>,
    timeout_secs: Option<f64>,
    rejection_max_attempts: Option<u64>,
    spec: Option<String>,
    property: Option<PropertyFile>,
    #[serde(default)]
    variables: BTreeMap<String, VariableFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PropertyFile {
    kind: String,
    majority: Option<String>,
    minority: Option<String>,
    qualified: Option<String>,
    #[serde(rename = "override")]
    override_: Option<BTreeMap<String, f64>>,
    minorities: Option<BTreeMap<String, String>>,
    lambda: Option<f64>,
    form: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableFile {
    condition: Option<String>,
    model: Option<String>,
    classifier: Option<String>,
    #[serde(rename = "override")]
    override_: Option<BTreeMap<String, f64>>,
    lambda: Option<f64>,
}

/// A loaded bundle: the problem plus the run configuration it asks for.
#[derive(Debug)]
pub struct Bundle {
    pub path: PathBuf,
    pub problem: FairnessProblem,
    pub config: VerifierConfig,
}

struct Loader<'a> {
    path: &'a Path,
    dir: PathBuf,
    models: BTreeMap<PathBuf, Arc<PopulationModel>>,
    classifiers: BTreeMap<PathBuf, Arc<Classifier>>,
}

impl Loader<'_> {
    fn invalid(&self, message: impl Into<String>) -> BundleError {
        BundleError::Invalid { path: self.path.to_path_buf(), message: message.into() }
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn model(&mut self, rel: &str) -> Result<Arc<PopulationModel>, BundleError> {
        let path = self.resolve(rel);
        if let Some(m) = self.models.get(&path) {
            return Ok(m.clone());
        }
        let text = std::fs::read_to_string(&path).map_err(|source| BundleError::Io { path: path.clone(), source })?;
        let model = PopulationModel::parse(&text)
            .map_err(|e| BundleError::Invalid { path: path.clone(), message: e.to_string() })?;
        let model = Arc::new(model);
        self.models.insert(path, model.clone());
        Ok(model)
    }

    fn classifier(&mut self, rel: &str) -> Result<Arc<Classifier>, BundleError> {
        let path = self.resolve(rel);
        if let Some(c) = self.classifiers.get(&path) {
            return Ok(c.clone());
        }
        if !path.exists() {
            return Err(BundleError::Io {
                path,
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            });
        }
        let clf = Classifier::load(&path).map_err(|e| BundleError::Invalid { path: path.clone(), message: e.to_string() })?;
        let clf = Arc::new(clf);
        self.classifiers.insert(path, clf.clone());
        Ok(clf)
    }

    fn predicate(&self, model: &PopulationModel, text: Option<&str>) -> Result<Predicate, BundleError> {
        match text {
            None => Ok(Predicate::Always),
            Some(t) => model
                .predicate(t)
                .map_err(|e| self.invalid(format!("predicate `{t}`: {e}"))),
        }
    }
}

fn required<'a>(loader: &Loader, v: &'a Option<String>, key: &str) -> Result<&'a str, BundleError> {
    v.as_deref().ok_or_else(|| loader.invalid(format!("missing `{key}`")))
}

/// Reads a bundle, applying command-line overrides.
pub fn load_bundle(path: &Path, args: &VerifyArgs) -> Result<Bundle, BundleError> {
    let text = std::fs::read_to_string(path).map_err(|source| BundleError::Io { path: path.to_path_buf(), source })?;
    let file: BundleFile =
        toml::from_str(&text).map_err(|e| BundleError::Invalid { path: path.to_path_buf(), message: e.to_string() })?;
    let mut loader = Loader {
        path,
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        models: BTreeMap::new(),
        classifiers: BTreeMap::new(),
    };

    let c = args.c.or(file.c).unwrap_or(0.0);
    let fairness_err = |e: fairness::FairnessError| BundleError::Invalid { path: path.to_path_buf(), message: e.to_string() };

    let problem = match (&file.spec, &file.property) {
        (Some(_), Some(_)) => return Err(loader.invalid("give either `spec` or `[property]`, not both")),
        (None, None) => return Err(loader.invalid("missing `spec` or `[property]`")),
        (None, Some(prop)) => {
            if !file.variables.is_empty() {
                return Err(loader.invalid("`[variables]` only applies with an explicit `spec`"));
            }
            let model = loader.model(required(&loader, &file.model, "model")?)?;
            let clf = loader.classifier(required(&loader, &file.classifier, "classifier")?)?;
            let form = match prop.form.as_deref() {
                None | Some("ratio") => ParityForm::Ratio,
                Some("difference") => ParityForm::Difference,
                Some(other) => return Err(loader.invalid(format!("unknown form `{other}`"))),
            };
            let maj = || loader.predicate(&model, prop.majority.as_deref());
            let min = || loader.predicate(&model, prop.minority.as_deref());
            match prop.kind.as_str() {
                "parity" => fairness::demographic_parity(c, maj()?, min()?, model.clone(), clf, form),
                "equal-opportunity" => {
                    let q = loader.predicate(&model, Some(required(&loader, &prop.qualified, "property.qualified")?))?;
                    fairness::equal_opportunity(c, maj()?, min()?, q, model.clone(), clf, form)
                }
                "causal" => {
                    let over = prop
                        .override_
                        .clone()
                        .ok_or_else(|| loader.invalid("causal property needs `override`"))?;
                    fairness::path_specific(c, maj()?, min()?, over, model.clone(), clf)
                }
                "group" => {
                    let groups = prop.minorities.clone().unwrap_or_default();
                    let mut preds = Vec::new();
                    for (name, text) in &groups {
                        preds.push((name.clone(), loader.predicate(&model, Some(text))?));
                    }
                    fairness::group_parity(c, maj()?, preds, model.clone(), clf)
                }
                "regression" => fairness::regression_parity(c, maj()?, min()?, model.clone(), clf),
                "individual" => fairness::individual_fairness(c, prop.lambda.unwrap_or(1.0), model.clone(), clf),
                other => return Err(loader.invalid(format!("unknown property kind `{other}`"))),
            }
            .map_err(fairness_err)?
        }
        (Some(spec_text), None) => {
            let spec = parse_spec(spec_text).map_err(|e| loader.invalid(format!("spec: {e}")))?;
            let mut bindings = BTreeMap::new();
            for (name, v) in &file.variables {
                let model_path = v
                    .model
                    .as_deref()
                    .or(file.model.as_deref())
                    .ok_or_else(|| loader.invalid(format!("variable `{name}` has no model")))?;
                let clf_path = v
                    .classifier
                    .as_deref()
                    .or(file.classifier.as_deref())
                    .ok_or_else(|| loader.invalid(format!("variable `{name}` has no classifier")))?;
                let model = loader.model(model_path)?;
                let clf = loader.classifier(clf_path)?;
                let mut var = SampledVariable::new(model.clone(), loader.predicate(&model, v.condition.as_deref())?, clf);
                if let Some(over) = &v.override_ {
                    if !model.has_mediator() {
                        return Err(loader.invalid(format!("variable `{name}`: model has no mediator block")));
                    }
                    var.mediator_override = Some(over.clone());
                }
                if let Some(lambda) = v.lambda {
                    if !(lambda > 0.0) {
                        return Err(loader.invalid(format!("variable `{name}`: lambda must be positive")));
                    }
                    var.pairwise_lambda = Some(lambda);
                }
                bindings.insert(name.clone(), var);
            }
            FairnessProblem::new(spec, bindings, c).map_err(fairness_err)?
        }
    };

    let mut config = VerifierConfig::default();
    if let Some(d) = args.delta.or(file.delta) {
        config.delta = d;
    }
    if let Some(b) = args.batch.or(file.batch) {
        config.batch_size = b;
    }
    config.seed = args.seed.or(file.seed).unwrap_or(0);
    if let Some(m) = args.max_samples.or(file.max_samples) {
        config.max_samples = (m > 0).then_some(m);
    }
    if let Some(t) = args.timeout_secs.or(file.timeout_secs) {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(loader.invalid(format!("timeout {t} is not a nonnegative number of seconds")));
        }
        config.timeout = Some(Duration::from_secs_f64(t));
    }
    if let Some(a) = file.rejection_max_attempts {
        config.rejection_max_attempts = a;
    }
    config.validate().map_err(|e| loader.invalid(e.to_string()))?;
    Ok(Bundle { path: path.to_path_buf(), problem, config })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableReport {
    pub n: u64,
    pub mean: Option<f64>,
    pub eps_final: Option<f64>,
    pub accepted: u64,
    pub total: u64,
    pub accept_rate: Option<f64>,
    /// Exact mean, in oracle mode.
    pub exact_mean: Option<f64>,
}

/// One run's outcome, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub mode: String,
    /// `fair`, `unfair`, `undecided` or `error`.
    pub answer: String,
    /// `sample_cap`, `timeout` or `rejection_exhausted` when undecided.
    pub reason: Option<String>,
    pub detail: Option<String>,
    pub spec: String,
    pub gamma_achieved: Option<f64>,
    pub delta: f64,
    pub c: f64,
    pub delta_z: f64,
    pub delta_weight: u64,
    pub iterations: u64,
    pub seed: u64,
    pub batch: usize,
    pub wall_time_secs: f64,
    pub variables: BTreeMap<String, VariableReport>,
    /// Ground truth, in oracle mode.
    pub truth: Option<bool>,
    pub error: Option<String>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        match self.answer.as_str() {
            "fair" => EXIT_FAIR,
            "unfair" => EXIT_UNFAIR,
            "undecided" => EXIT_UNDECIDED,
            _ => EXIT_RUNTIME,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn reason_str(r: UndecidedReason) -> &'static str {
    match r {
        UndecidedReason::SampleCap => "sample_cap",
        UndecidedReason::Timeout => "timeout",
        UndecidedReason::RejectionExhausted => "rejection_exhausted",
    }
}

fn empty_report(bundle: &Bundle, mode: &str) -> Report {
    let spec = &bundle.problem.spec;
    Report {
        schema_version: REPORT_SCHEMA_VERSION,
        mode: mode.into(),
        answer: "error".into(),
        reason: None,
        detail: None,
        spec: spec.to_string(),
        gamma_achieved: None,
        delta: bundle.config.delta,
        c: bundle.problem.c,
        delta_z: verifier::leaf_delta(spec, bundle.config.delta),
        delta_weight: spec.delta_weight(),
        iterations: 0,
        seed: bundle.config.seed,
        batch: bundle.config.batch_size,
        wall_time_secs: 0.0,
        variables: BTreeMap::new(),
        truth: None,
        error: None,
    }
}

/// Runs the verifier (or the oracle) on a loaded bundle. Failures are
/// recorded in the report rather than returned.
pub fn run_bundle(bundle: &Bundle, use_oracle: bool) -> Report {
    if use_oracle {
        let start = Instant::now();
        let mut report = empty_report(bundle, "oracle");
        match oracle::exact_means(&bundle.problem) {
            Ok(exact) => {
                report.answer = if exact.truth { "fair" } else { "unfair" }.into();
                report.truth = Some(exact.truth);
                report.variables = exact
                    .means
                    .iter()
                    .map(|(k, m)| {
                        (
                            k.clone(),
                            VariableReport {
                                n: 0,
                                mean: None,
                                eps_final: None,
                                accepted: 0,
                                total: 0,
                                accept_rate: None,
                                exact_mean: Some(*m),
                            },
                        )
                    })
                    .collect();
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        report.wall_time_secs = start.elapsed().as_secs_f64();
        return report;
    }

    let mut report = empty_report(bundle, "verify");
    match verifier::verify(&bundle.problem, &bundle.config) {
        Ok(v) => {
            report.answer = v.answer.as_str().into();
            if let Answer::Undecided(r) = v.answer {
                report.reason = Some(reason_str(r).into());
            }
            report.detail = v.detail;
            report.gamma_achieved = v.gamma;
            report.delta_z = v.delta_z;
            report.iterations = v.iterations;
            report.wall_time_secs = v.wall_time.as_secs_f64();
            report.variables = v
                .per_variable
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        VariableReport {
                            n: s.n,
                            mean: finite(s.mean),
                            eps_final: finite(s.eps),
                            accepted: s.accepted,
                            total: s.total_attempts,
                            accept_rate: (s.total_attempts > 0).then(|| s.accept_rate()),
                            exact_mean: None,
                        },
                    )
                })
                .collect();
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

/// Parses `args` (including the program name), runs, and returns the exit
/// status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let Command::Verify(args) = cli.command;
    let bundle = match load_bundle(&args.bundle, &args) {
        Ok(b) => b,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let report = run_bundle(&bundle, args.oracle);
    let json = report.to_json();
    if let Some(path) = &args.report {
        if let Err(e) = std::fs::write(path, format!("{json}\n")) {
            let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
            return EXIT_USAGE;
        }
    }
    let _ = writeln!(out, "{json}");
    if let Some(e) = &report.error {
        let _ = writeln!(err, "error: {e}");
    }
    report.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_64() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["fairverify", "verify"], &mut out, &mut err), EXIT_USAGE);
        assert_eq!(run(["fairverify", "frobnicate"], &mut out, &mut err), EXIT_USAGE);
        assert_eq!(
            run(["fairverify", "verify", "--bundle", "x.toml", "--delta", "abc"], &mut out, &mut err),
            EXIT_USAGE
        );
        assert_eq!(run(["fairverify", "--help"], &mut out, &mut err), 0);
    }

    #[test]
    fn missing_bundle_names_file() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(["fairverify", "verify", "--bundle", "/nonexistent/b.toml"], &mut out, &mut err);
        assert_eq!(code, EXIT_USAGE);
        assert!(String::from_utf8(err).unwrap().contains("/nonexistent/b.toml"));
    }
}
