use std::path::PathBuf;
use std::process::Command;

use fairverify::classifier::{Classifier, ClassifierError, ExternalClassifier, TreeNode};
use fairverify::{FeatureRecord, PopulationModel, RngStream};

fn script(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn python() -> Option<String> {
    Command::new("python3").arg("--version").output().ok().map(|_| "python3".to_string())
}

fn spawn(name: &str) -> Option<Classifier> {
    let py = python()?;
    Some(Classifier::External(ExternalClassifier::spawn(&[py, script(name)], None).unwrap()))
}

fn job_records(n: u64) -> Vec<FeatureRecord> {
    let m = PopulationModel::parse(include_str!("../benchmarks/job/job.model")).unwrap();
    (0..n).map(|i| m.sample(&mut RngStream::new(1, 0, i)).unwrap()).collect()
}

#[test]
fn matches_builtin_tree() {
    let Some(ext) = spawn("job_tree.py") else { return };
    let tree = Classifier::tree(TreeNode::split(
        "col_rank",
        5.0,
        TreeNode::leaf(1.0),
        TreeNode::split("years_exp", 5.0, TreeNode::leaf(0.0), TreeNode::leaf(1.0)),
    ))
    .unwrap();
    let xs = job_records(500);
    let batch = ext.evaluate_batch(&xs).unwrap();
    assert_eq!(batch, tree.evaluate_batch(&xs).unwrap());
    // One at a time through the same process.
    for (x, want) in xs.iter().zip(&batch).take(50) {
        assert_eq!(ext.evaluate(x).unwrap(), *want);
    }
}

#[test]
fn out_of_range_reply_is_protocol_error() {
    let Some(ext) = spawn("bad_reply.py") else { return };
    let err = ext.evaluate(&job_records(1)[0]).unwrap_err();
    assert!(matches!(err, ClassifierError::ExternalProtocol(ref m) if m.contains("outside")), "{err}");
}

#[test]
fn early_exit_is_protocol_error() {
    let Some(ext) = spawn("exits_early.py") else { return };
    let err = ext.evaluate_batch(&job_records(3)).unwrap_err();
    assert!(matches!(err, ClassifierError::ExternalProtocol(_)), "{err}");
}

#[test]
fn missing_program_is_reported() {
    let err = ExternalClassifier::spawn(&["/definitely/not/here".to_string()], None).unwrap_err();
    assert!(matches!(err, ClassifierError::ExternalProtocol(ref m) if m.contains("cannot start")));
}

#[test]
fn selected_features_must_exist() {
    let Some(py) = python() else { return };
    let ext = ExternalClassifier::spawn(&[py, script("job_tree.py")], Some(vec!["nope".into()])).unwrap();
    let err = Classifier::External(ext).evaluate(&job_records(1)[0]).unwrap_err();
    assert!(matches!(err, ClassifierError::MissingFeature(ref f) if f == "nope"));
}
