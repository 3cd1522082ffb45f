"""End-to-end smoke test of the Python bindings.

Uses an installed `riskstrat` module if there is one, otherwise the library
built by `cargo build --release -p riskstrat-py`.
"""

import importlib
import json
import math
import pathlib
import shutil
import sys
import tempfile


def load():
    try:
        return importlib.import_module("riskstrat")
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    built = root / "target" / "release" / "libriskstrat.so"
    if not built.exists():
        sys.exit(f"build the extension first: cargo build --release -p riskstrat-py ({built} missing)")
    tmp = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(built, tmp / "riskstrat.so")
    sys.path.insert(0, str(tmp))
    return importlib.import_module("riskstrat")


def main():
    rs = load()

    cohort, truth = rs.generate_cohort(n=1500, seed=7)
    assert len(cohort) == 1500 and len(truth) == 1500
    assert cohort.feature_names == ["RIDAGEYR", "INDFMPIR", "RIDRETH1", "RIAGENDR", "MCQ010"]
    assert sum(cohort.missing_counts) > 0

    report = rs.cross_validate(cohort, folds=5, seed=7)
    assert 0.5 < report.auc < 0.75, report
    assert len(report.oof_probabilities) == len(cohort)
    assert math.isclose(rs.auc(report.oof_probabilities, report.labels), report.auc, abs_tol=1e-12)
    assert "<svg" in report.roc_svg()

    model = rs.train(cohort)
    again = rs.RiskModel.from_json(model.to_json())
    assert again.weights == model.weights and again.intercept == model.intercept
    probs = model.predict(cohort)
    assert all(0.0 < p < 1.0 for p in probs)

    att = rs.explain(model, cohort, 3, background_size=64)
    assert abs(att.efficiency_gap()) < 1e-9
    assert math.isclose(att.prediction, probs[3], rel_tol=0, abs_tol=1e-12)
    doc = json.loads(att.to_json())
    assert {c["feature"] for c in doc["contributions"]} == set(att.feature_names)
    assert "<svg" in att.waterfall_svg()

    sampled = rs.explain(model, cohort, 3, background_size=64, permutations=500)
    assert max(abs(a - b) for a, b in zip(att.phi, sampled.phi)) < 0.02

    gi = rs.global_importance(model, cohort, background_size=32)
    names = [name for name, _ in gi.ranking()]
    assert set(names[:2]) == {"RIDAGEYR", "INDFMPIR"}, gi.ranking()
    assert "<svg" in gi.summary_svg()

    iso = rs.recalibrate(report.oof_probabilities, report.labels, method="isotonic", apply_to=[0.1, 0.3, 0.6])
    assert iso == sorted(iso)

    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "cohort.csv"
        cohort.to_csv(str(path))
        back = rs.Cohort.from_csv(str(path))
        assert back.labels == cohort.labels
    try:
        rs.Cohort.from_csv("/no/such/file.csv")
    except FileNotFoundError:
        pass
    else:
        raise AssertionError("missing file accepted")
    try:
        rs.explain(model, cohort, 10_000)
    except rs.RiskstratError:
        pass
    else:
        raise AssertionError("out-of-range instance accepted")

    print(f"python smoke test passed: auc={report.auc:.4f} top={names[:2]}")


if __name__ == "__main__":
    main()
