import json
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nowcast.bootstrap import CoverageReport, PredictionInterval
from nowcast.errors import ReleaseRefusedError, ValidationError
from nowcast.explain import AttributionVector, linear_contributions, stability_report, tree_shap
from nowcast.models import ModelData, ModelSpec, fit_model
from nowcast.reporting import (
    AuditTrail,
    assemble_release,
    dashboard,
    fallback_check,
    methodological_appendix,
    pick_fallback,
    render_summary,
    rolling_mean,
    waterfall_decomposition,
)
from nowcast.walk_forward import AuditVerdict, LossTable, Violation

ORIGIN = date(2021, 5, 15)
CLEAN = AuditVerdict((), 4, 100)


def interval(lo, hi, point=None):
    return PredictionInterval(ORIGIN, 0.1, lo, hi, (lo + hi) / 2 if point is None else point, {}, 199)


def additive(values, base=1.0, names=None):
    names = names or tuple(f"f{j}" for j in range(len(values)))
    return AttributionVector(ORIGIN, "m", "tree_shap", names, values, base_value=base,
                             prediction=base + float(np.sum(values)))


def test_block_sums():
    wf = waterfall_decomposition(additive([0.3, -0.1, 0.5]), {"f0": "labour", "f1": "labour", "f2": "surveys"})
    assert dict(wf.blocks) == pytest.approx({"labour": 0.2, "surveys": 0.5})
    assert wf.blocks[0][0] == "labour"


def test_single_block_waterfall():
    v = additive([0.3, -0.1, 0.5], base=2.0)
    wf = waterfall_decomposition(v)
    assert [b for b, _ in wf.blocks] == ["other"]
    assert abs(wf.blocks[0][1] - (v.prediction - v.base_value)) < 1e-15


def test_tree_shap_waterfall_reconciles():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((60, 4))
    m = fit_model(ModelSpec("gbdt", {"trees": 30, "min_leaf": 2}),
                  ModelData(X, X[:, 0] * X[:, 1] + X[:, 2], ("a", "b", "c", "d"), X[-1]))
    wf = waterfall_decomposition(tree_shap(m, X[-1]), {"a": "hard", "b": "hard", "c": "soft"})
    assert abs(wf.residual) < 1e-9 and abs(wf.total() - wf.point) < 1e-12


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=15), st.floats(-1e3, 1e3))
def test_waterfall_reconciliation_property(values, base):
    wf = waterfall_decomposition(additive(values, base), {"f0": "x"})
    assert abs(wf.residual) <= 1e-9 * max(1.0, abs(wf.point))
    assert abs(wf.total() - wf.point) <= 1e-9 * max(1.0, abs(wf.point))


def test_non_additive_waterfall_is_rejected():
    v = AttributionVector(ORIGIN, "m", "permutation", ("a",), [0.5])
    with pytest.raises(ValidationError, match="additive"):
        waterfall_decomposition(v)


def test_fallback_rules():
    keep = fallback_check(interval(0, 0.5), 1.0, 9.0, "ar")
    assert keep.point == 0.25 and not keep.low_confidence and not keep.fallback_used
    swap = fallback_check(interval(0, 2.0), 1.0, 9.0, "ar")
    assert swap.point == 9.0 and swap.low_confidence and swap.fallback_used and swap.fallback_model == "ar"
    edge = fallback_check(interval(0, 1.0), 1.0, 9.0, "ar")
    assert not edge.fallback_used
    with pytest.raises(ValidationError):
        fallback_check(interval(0, 2.0), 1.0, None)
    with pytest.raises(ValidationError):
        fallback_check(interval(0, 2.0), 0.0, 1.0)


def test_fallback_preference():
    assert pick_fallback({"rwd": ("rw_drift", 1.0), "ar1": ("ar", 2.0)}) == ("ar1", 2.0)
    assert pick_fallback({"rwd": ("rw_drift", 1.0), "ar1": ("ar", None)}) == ("rwd", 1.0)
    assert pick_fallback({"x": ("ols", 1.0)}) is None


def loss_table(sq: dict, start=date(2020, 1, 1)):
    ids = tuple(sq)
    S = np.array([sq[m] for m in ids], float)
    T = S.shape[1]
    return LossTable(ids, tuple(start + timedelta(days=91 * j) for j in range(T)), tuple(f"p{j}" for j in range(T)),
                     np.zeros_like(S), np.zeros(T), S, np.sqrt(S))


def coverage_of(hits, start=date(2020, 1, 1)):
    origins = tuple(start + timedelta(days=91 * j) for j in range(len(hits)))
    return CoverageReport((origins[0], origins[-1]), 0.9, float(np.mean(hits)), 1.0, (1.0,) * len(hits),
                          (1.0,) * len(hits), tuple(hits), origins)


def test_dashboard_examples():
    table = loss_table({"ml": [1, 4, 1, 4], "ar": [1, 4, 1, 4]})
    d = dashboard(table, coverage_of([True] * 4), None, "ar", rolling=2)
    assert d.coverage["empirical"] == 1.0 and d.coverage["rolling"] == [1.0, 1.0, 1.0]
    assert d.benchmark_distance["ml"] == {"rmsfe_ratio": 1.0, "mafe_ratio": 1.0}


def test_dashboard_surfaces_flags_verbatim():
    a, b = [10.0, 9, 8, 7, 6, 5, 4], [1.0, 9, 8, 7, 6, 5, 4]
    vs = [AttributionVector(date(2020, 1, 1) + timedelta(days=91 * k), "m", "tree_shap",
                            tuple(f"f{j}" for j in range(7)), v) for k, v in enumerate([a, b])]
    rep = stability_report(vs)
    d = dashboard(loss_table({"ml": [1, 2], "ar": [2, 2]}), None, rep, "ar")
    assert d.instability_signals[0]["feature"] == "f0"
    assert {k: v for k, v in d.instability_signals[0].items() if k != "kind"} == rep.flags[0]


def test_dashboard_rejects_disjoint_windows():
    with pytest.raises(ValidationError):
        dashboard(loss_table({"ml": [1, 2], "ar": [2, 2]}), coverage_of([True], date(2030, 1, 1)), None, "ar")


def test_rolling_mean():
    assert rolling_mean([1, 0, 1, 1], 2) == [0.5, 0.5, 1.0]


def release_inputs():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 3))
    m = fit_model(ModelSpec("ols"), ModelData(X, X @ [1.0, -1.0, 0.5], ("a", "b", "c"), X[-1]))
    return linear_contributions(m, X[-1], origin=ORIGIN)


KW = dict(model_id="ols", model_version="v1", config_hash="cfg", log_digest="log")


def test_release_complete_inputs(tmp_path):
    attr = release_inputs()
    pkg, rec = assemble_release(ORIGIN, interval(attr.prediction - 0.2, attr.prediction + 0.2, attr.prediction),
                                attr, CLEAN, 1.0, benchmark=("ar", 0.0), block_tags={"a": "real"},
                                timestamp="2021-05-15T00:00:00+00:00", **KW)
    assert pkg.flags == {"low_confidence": False, "fallback_used": False, "leakage_clean": True}
    assert pkg.point == attr.prediction
    assert abs(pkg.waterfall.residual) < 1e-9
    assert rec.outputs_digest == pkg.digest()
    doc = json.loads(pkg.to_json())
    assert doc["schema"] == "nowcast-release" and doc["provenance"]["config_hash"] == "cfg"
    assert "config hash: cfg" in render_summary(pkg)
    trail = AuditTrail(tmp_path / "audit.jsonl")
    trail.append(rec)
    trail.append(rec)
    assert len(trail.records()) == 2 and trail.records()[0]["outputs_digest"] == pkg.digest()


def test_release_fallback_identifies_benchmark():
    attr = release_inputs()
    pkg, _ = assemble_release(ORIGIN, interval(-3, 3), attr, CLEAN, 1.0, benchmark=("ar", 0.7), **KW)
    assert pkg.point == 0.7 and pkg.flags["low_confidence"] and pkg.provenance["fallback_model"] == "ar"
    assert "LOW CONFIDENCE" in render_summary(pkg)


def test_release_refused_on_leakage():
    dirty = AuditVerdict((Violation(ORIGIN, "x007", "future_publication", "1 cell"),), 1, 10)
    with pytest.raises(ReleaseRefusedError, match="x007") as err:
        assemble_release(ORIGIN, interval(0, 1), release_inputs(), dirty, 1.0, **KW)
    assert err.value.violations[0].feature == "x007"


def test_release_requires_inputs():
    with pytest.raises(ValidationError):
        assemble_release(ORIGIN, None, release_inputs(), CLEAN, 1.0, **KW)
    with pytest.raises(ValidationError):
        assemble_release(ORIGIN, interval(0, 1), None, CLEAN, 1.0, **KW)
    with pytest.raises(ValidationError):
        assemble_release(ORIGIN, interval(0, 1), release_inputs(), None, 1.0, **KW)


def test_replay_gives_identical_digest():
    a, _ = assemble_release(ORIGIN, interval(0, 0.5), release_inputs(), CLEAN, 1.0, **KW)
    b, _ = assemble_release(ORIGIN, interval(0, 0.5), release_inputs(), CLEAN, 1.0, **KW)
    assert a.digest() == b.digest() and a.to_json() == b.to_json()


def test_appendix_lists_sections():
    text = methodological_appendix({"bootstrap": {"scheme": "moving_block", "B": 199},
                                    "models": [{"family": "ar", "p": 1}], "data": {"series": ["gdp", "ip"]}})
    assert text.index("Data sources") < text.index("Model specifications") < text.index("Bootstrap design")
    assert "scheme: moving_block" in text and "- family: ar" in text
