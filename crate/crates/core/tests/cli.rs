use std::path::PathBuf;
use std::process::{Command, Output};

use fairverify::cli::Report;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairverify"))
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixture(name: &str) -> String {
    root().join("tests/fixtures").join(name).display().to_string()
}

fn job_bundle() -> String {
    root().join("benchmarks/job/job.toml").display().to_string()
}

fn run(args: &[&str]) -> (i32, Output) {
    let out = bin().args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), out)
}

fn report(out: &Output) -> Report {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad report ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn python_available() -> bool {
    Command::new("python3").arg("--version").output().is_ok()
}

#[test]
fn job_bundle_is_fair() {
    let (code, out) = run(&["verify", "--bundle", &job_bundle(), "--delta", "1e-10", "--seed", "7"]);
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r.answer, "fair");
    assert_eq!(r.schema_version, 1);
    assert_eq!(r.delta, 1e-10);
    assert_eq!(r.seed, 7);
    assert!(r.gamma_achieved.unwrap() <= 1e-10);
    for v in r.variables.values() {
        assert!(v.n > 0 && v.accepted == v.n);
        let rate = v.accept_rate.unwrap();
        assert!((0.45..0.55).contains(&rate), "{rate}");
        assert!(v.eps_final.unwrap() > 0.0);
    }
}

#[test]
fn oracle_mode_reports_exact_means() {
    let (code, out) = run(&["verify", "--bundle", &job_bundle(), "--oracle"]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r.mode, "oracle");
    assert_eq!(r.truth, Some(true));
    assert!((r.variables["maj"].exact_mean.unwrap() - 0.977_767_436_555_480_4).abs() < 1e-13);
    assert!((r.variables["min"].exact_mean.unwrap() - 0.844_954_174_029_755_5).abs() < 1e-13);
    assert_eq!(r.iterations, 0);
}

#[test]
fn seed_reproducibility() {
    let args = ["verify", "--bundle", &job_bundle(), "--seed", "11", "--batch", "100"];
    let (_, a) = run(&args);
    let (_, b) = run(&args);
    let (mut ra, mut rb) = (report(&a), report(&b));
    ra.wall_time_secs = 0.0;
    rb.wall_time_secs = 0.0;
    assert_eq!(ra, rb);
    let (_, c) = run(&["verify", "--bundle", &job_bundle(), "--seed", "12", "--batch", "100"]);
    assert_ne!(ra.variables["maj"].mean, report(&c).variables["maj"].mean);
}

#[test]
fn report_file_round_trips() {
    let dir = std::env::temp_dir().join(format!("fairverify-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    let (code, out) = run(&[
        "verify",
        "--bundle",
        &job_bundle(),
        "--report",
        path.to_str().unwrap(),
        "--c",
        "0.1",
    ]);
    assert_eq!(code, 1, "ratio 0.864 < 0.9");
    let written: Report = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(written, report(&out));
    assert_eq!(written.answer, "unfair");
    assert_eq!(written.c, 0.1);
    let again: Report = serde_json::from_str(&written.to_json()).unwrap();
    assert_eq!(again, written);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn causal_and_explicit_bundles() {
    // Mediator drawn as majority: 0.48 - 0.48 + 0.1 >= 0.
    let (code, out) = run(&["verify", "--bundle", &fixture("causal.toml")]);
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&out.stdout));
    // Same property without the override: 0.24 - 0.48 + 0.1 < 0.
    let (code, out) = run(&["verify", "--bundle", &fixture("explicit.toml")]);
    assert_eq!(code, 1, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(report(&out).batch, 50);
}

#[test]
fn boundary_instance_is_undecided() {
    let (code, out) = run(&["verify", "--bundle", &fixture("boundary.toml")]);
    assert_eq!(code, 2);
    let r = report(&out);
    assert_eq!(r.answer, "undecided");
    assert_eq!(r.reason.as_deref(), Some("sample_cap"));
    assert_eq!(r.variables["z"].n, 5000);
    assert!(r.gamma_achieved.is_none());
}

#[test]
fn missing_model_names_the_file() {
    let (code, out) = run(&["verify", "--bundle", &fixture("missing_model.toml")]);
    assert_eq!(code, 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such.model"));
}

#[test]
fn usage_errors() {
    assert_eq!(run(&[]).0, 64);
    assert_eq!(run(&["verify"]).0, 64);
    assert_eq!(run(&["verify", "--bundle", &job_bundle(), "--delta", "2"]).0, 64);
    assert_eq!(run(&["verify", "--bundle", &job_bundle(), "--batch", "0"]).0, 64);
    let (code, out) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("verify"));
}

#[test]
fn external_classifier_bundle() {
    if !python_available() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let (code, out) = run(&["verify", "--bundle", &fixture("external.toml"), "--seed", "3"]);
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r.answer, "fair");
    assert!((r.variables["maj"].mean.unwrap() - 0.9778).abs() < 0.03);
}
