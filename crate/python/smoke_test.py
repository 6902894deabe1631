"""Quick end-to-end check of the Python bindings.

Build first: pip install --no-build-isolation -e crates/python
"""

import json
import math
import pathlib
import sys

import fairverify_py as fv

ROOT = pathlib.Path(__file__).resolve().parents[1]
JOB = ROOT / "crates" / "core" / "benchmarks" / "job"


def check(cond, msg):
    if not cond:
        print(f"FAIL {msg}")
        sys.exit(1)
    print(f"ok   {msg}")


def main():
    check(fv.epsilon(0.05, 10000) == float("0.024856840996518894"), "epsilon golden value")
    check(math.isclose(fv.hoeffding_epsilon(0.05, 100), math.sqrt(math.log(40) / 200)), "hoeffding")

    spec = fv.parse_spec("mu(min) / mu(maj) >= 0.8")
    check(spec.free_variables() == ["maj", "min"], "free variables")
    check(spec.eval({"maj": 0.9, "min": 0.8}) is True, "exact evaluation")
    try:
        fv.parse_spec("mu(x) >=")
        raised = False
    except ValueError:
        raised = True
    check(raised, "parse error raised")

    model = fv.Model((JOB / "job.model").read_text())
    clf = fv.Classifier.load(str(JOB / "job_tree.json"))
    check("col_rank" in model.features, "model features")
    rec = model.sample(seed=1, index=0)
    check(model.sample(seed=1, index=0) == rec, "sampling is deterministic")
    check(clf.evaluate(rec) in (0.0, 1.0), "classifier output")
    rec, attempts = model.rejection_sample("is_male == 0", seed=2)
    check(rec["is_male"] == 0 and attempts >= 1, "rejection sampling")

    problem = fv.demographic_parity(0.2, "is_male == 1", "is_male == 0", model, clf)
    exact = problem.exact_means()
    check(abs(exact["means"]["maj"] - 0.97776743655548036) < 1e-13, "exact majority mean")
    check(exact["truth"] is True, "exact truth")
    v = problem.verify(delta=1e-5, batch=100, seed=3)
    check(v["answer"] == "fair", f"verify answer ({v['answer']}, n={v['variables']['maj']['n']})")
    check(problem.verify(delta=1e-5, batch=100, seed=3)["variables"] == v["variables"], "seeded runs agree")

    unfair = fv.demographic_parity(0.1, "is_male == 1", "is_male == 0", model, clf)
    check(unfair.verify(batch=100)["answer"] == "unfair", "c=0.1 is unfair")

    custom = fv.Problem("mu(z) >= 0.5", {"z": (model, clf, None)})
    check(custom.verify(batch=100)["answer"] == "fair", "explicit spec")

    report = fv.run_bundle(str(JOB / "job.toml"), oracle=True)
    check(report["mode"] == "oracle" and report["truth"] is True, "bundle oracle report")
    json.dumps(report)
    print("all good")


if __name__ == "__main__":
    main()
