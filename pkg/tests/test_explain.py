from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nowcast.bootstrap import BlockBootstrapConfig
from nowcast.errors import UnsupportedModelError, ValidationError
from nowcast.explain import (
    AttributionVector,
    block_permutation,
    block_permutation_importance,
    coefficient_importance,
    importance_bands,
    importance_profile,
    integrated_gradients,
    linear_contributions,
    rank_correlation,
    stability_report,
    tree_shap,
    tree_shap_values,
    vip_scores,
    write_attributions_csv,
)
from nowcast.models import ModelData, ModelSpec, fit_model, input_gradient, predict
from nowcast.models.trees import Tree, grow_tree
from nowcast.synthetic import DGPSpec, simulate
from oracles import brute_force_shapley

from nowcast._rng import keyed_rng


def data_of(X, y, x_new=None, names=None):
    X = np.asarray(X, float)
    names = names or tuple(f"f{j}" for j in range(X.shape[1]))
    x_new = X[-1] if x_new is None else np.asarray(x_new, float)
    return ModelData(X, np.asarray(y, float), tuple(names), x_new, float(y[-1]))


def standardized(rng, n, f):
    Z = rng.standard_normal((n, f))
    return (Z - Z.mean(0)) / Z.std(0)


# coefficients and VIP ---------------------------------------------------

def test_coefficient_importance_unit_scale():
    X = standardized(np.random.default_rng(0), 40, 2)
    m = fit_model(ModelSpec("ols"), data_of(X, 2 * X[:, 0] - X[:, 1]))
    np.testing.assert_allclose(coefficient_importance(m).values, [2.0, -1.0], atol=1e-10)


def test_zero_coefficient_gives_zero_importance():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((50, 3))
    m = fit_model(ModelSpec("lasso", {"lambda": 100.0}), data_of(X, X[:, 0] + rng.standard_normal(50)))
    assert np.array_equal(coefficient_importance(m).values, np.zeros(3))


def test_coefficient_importance_is_scale_free():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((60, 3))
    y = X @ [1.0, -0.5, 0.2] + 0.3 * rng.standard_normal(60)
    a = coefficient_importance(fit_model(ModelSpec("ols"), data_of(X, y))).values
    X2 = X * [2.0, 1.0, 10.0]
    b = coefficient_importance(fit_model(ModelSpec("ols"), data_of(X2, y))).values
    np.testing.assert_allclose(a, b, rtol=1e-9)


def test_coefficient_importance_needs_linear_model():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((30, 2))
    m = fit_model(ModelSpec("gbdt", {"trees": 3}), data_of(X, X[:, 0]))
    with pytest.raises(UnsupportedModelError):
        coefficient_importance(m)


def test_linear_contributions_reconstruct_forecast():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((50, 4))
    m = fit_model(ModelSpec("ridge", {"lambda": 0.5}), data_of(X, X[:, 0] + rng.standard_normal(50)))
    v = linear_contributions(m, rng.standard_normal(4))
    assert v.additive and abs(v.base_value + v.values.sum() - v.prediction) < 1e-12


def test_vip_single_predictor_is_one():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((30, 1))
    m = fit_model(ModelSpec("plsr", {"k": 1}), data_of(x, 2 * x[:, 0] + rng.standard_normal(30)))
    np.testing.assert_allclose(vip_scores(m).values, [1.0], atol=1e-12)


def vip_by_definition(W, q, T):
    f, k = W.shape
    ssy = np.array([q[a] ** 2 * T[:, a] @ T[:, a] for a in range(k)])
    out = np.zeros(f)
    for j in range(f):
        out[j] = np.sqrt(f * sum(ssy[a] * (W[j, a] / np.linalg.norm(W[:, a])) ** 2 for a in range(k)) / ssy.sum())
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 3))
def test_vip_matches_definition_and_normalizes(seed, f, k):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((40, f))
    y = X @ rng.standard_normal(f) + rng.standard_normal(40)
    k = min(k, f)
    m = fit_model(ModelSpec("plsr", {"k": k}), data_of(X, y))
    v = vip_scores(m).values
    p = m.params
    np.testing.assert_allclose(v, vip_by_definition(p["weights"], p["y_loadings"], p["scores"]), atol=1e-10)
    assert abs((v ** 2).sum() - f) < 1e-8


def test_vip_zero_weight_predictor():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((50, 2))
    X -= X.mean(0)
    y = X[:, 0] + rng.standard_normal(50)
    y -= y.mean()
    y -= X[:, 1] * (X[:, 1] @ y) / (X[:, 1] @ X[:, 1])
    m = fit_model(ModelSpec("plsr", {"k": 1}), data_of(X, y))
    assert vip_scores(m).values[1] < 1e-10


def test_vip_rejects_other_families():
    X = np.random.default_rng(7).standard_normal((20, 2))
    with pytest.raises(UnsupportedModelError):
        vip_scores(fit_model(ModelSpec("ols"), data_of(X, X[:, 0])))


# tree SHAP ----------------------------------------------------------------

def stump(values=(1.0, 3.0), cover=(1.0, 3.0)):
    return Tree(np.array([0, -1, -1]), np.array([0.0, 0.0, 0.0]), np.array([1, -1, -1]),
                np.array([2, -1, -1]), np.array([0.0, *values]), np.array([sum(cover), *cover]))


def test_single_feature_tree_puts_everything_on_that_feature():
    phi, base = tree_shap_values(stump(), np.array([1.0, 5.0, -2.0]))
    assert base == 2.5
    np.testing.assert_array_equal(phi, [0.5, 0.0, 0.0])


def test_uniform_leaves_give_zero_attributions():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((40, 3))
    t = grow_tree(X, X[:, 0] + X[:, 1], 3, 2)
    flat = Tree(t.feature, t.threshold, t.left, t.right, np.full(t.n_nodes, 0.7), t.cover)
    phi, base = tree_shap_values(flat, rng.standard_normal(3))
    assert np.all(np.abs(phi) < 1e-15) and abs(base - 0.7) < 1e-15


def random_tree(seed, max_features=12):
    rng = keyed_rng(seed, "test-tree")
    f = int(rng.integers(1, max_features + 1))
    n = int(rng.integers(8, 60))
    X = rng.standard_normal((n, f))
    X[:, rng.integers(0, f)] = np.round(X[:, 0])
    y = np.sin(X @ rng.standard_normal(f)) + 0.1 * rng.standard_normal(n)
    t = grow_tree(X, y, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    return t, rng.standard_normal(f) * 1.5


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_tree_shap_matches_coalition_enumeration(seed):
    t, x = random_tree(seed, max_features=8)
    phi, base = tree_shap_values(t, x)
    ref, ref_base = brute_force_shapley(t, x)
    np.testing.assert_allclose(phi, ref, atol=1e-9, rtol=0)
    assert abs(base - ref_base) < 1e-9
    assert abs(base + phi.sum() - t.predict(x)[0]) < 1e-9


def test_depth_two_tree_on_two_features():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((80, 2))
    t = grow_tree(X, X[:, 0] * X[:, 1] + X[:, 1], 2, 3)
    for x in rng.standard_normal((10, 2)):
        phi, base = tree_shap_values(t, x)
        ref, ref_base = brute_force_shapley(t, x)
        np.testing.assert_allclose(phi, ref, atol=1e-12)


@pytest.mark.parametrize("spec", [ModelSpec("random_forest", {"trees": 12, "depth": 3, "min_leaf": 2}, seed=1),
                                  ModelSpec("gbdt", {"trees": 20, "depth": 2, "min_leaf": 2,
                                                     "learning_rate": 0.3}, seed=1)])
def test_ensemble_local_accuracy(spec):
    rng = np.random.default_rng(10)
    X = rng.standard_normal((60, 4))
    y = X[:, 0] - 2 * X[:, 2] + 0.2 * rng.standard_normal(60)
    m = fit_model(spec, data_of(X, y))
    for x in rng.standard_normal((5, 4)):
        v = tree_shap(m, x)
        assert abs(v.base_value + v.values.sum() - predict(m, x)) < 1e-9


def test_gbdt_attribution_is_scaled_sum_of_trees():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((50, 3))
    m = fit_model(ModelSpec("gbdt", {"trees": 5, "learning_rate": 0.2, "min_leaf": 2}), data_of(X, X[:, 1] ** 2))
    x = rng.standard_normal(3)
    expected = sum(0.2 * tree_shap_values(t, x)[0] for t in m.params["trees"])
    np.testing.assert_allclose(tree_shap(m, x).values, expected, atol=1e-14)


def test_tree_shap_rejects_linear_models():
    X = np.random.default_rng(12).standard_normal((20, 2))
    with pytest.raises(UnsupportedModelError):
        tree_shap(fit_model(ModelSpec("ols"), data_of(X, X[:, 0])), X[0])


# integrated gradients -------------------------------------------------------

def affine_model():
    rng = np.random.default_rng(13)
    X = rng.standard_normal((40, 3))
    return fit_model(ModelSpec("ols"), data_of(X, X @ [1.5, -2.0, 0.5] + 3 + 0.1 * rng.standard_normal(40))), X


@pytest.mark.parametrize("steps", [16, 17, 100])
def test_ig_on_affine_model_is_exact(steps):
    m, X = affine_model()
    x = np.array([0.3, -1.2, 2.0])
    v = integrated_gradients(m, x, "zeros", steps)
    np.testing.assert_allclose(v.values, m.params["coef"] * x, atol=1e-12, rtol=0)
    b = np.array([1.0, 1.0, -1.0])
    v = integrated_gradients(m, x, b, steps)
    np.testing.assert_allclose(v.values, m.params["coef"] * (x - b), atol=1e-12, rtol=0)
    assert v.metadata["baseline"] == "vector"


def test_ig_at_baseline_is_zero():
    m, X = affine_model()
    med = np.median(X, axis=0)
    v = integrated_gradients(m, med, "window_median", 32, window=X)
    assert np.all(v.values == 0)


def trained_mlp(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, 3))
    y = np.tanh(X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.standard_normal(60)
    return fit_model(ModelSpec("mlp", {"hidden": [6], "epochs": 400}, seed=seed), data_of(X, y)), X


def test_ig_matches_high_resolution_integral():
    m, X = trained_mlp()
    x, b = np.array([1.5, -0.7, 1.1]), np.median(X, axis=0)
    v = integrated_gradients(m, x, "window_median", 256, window=X)
    # trapezoid rule on 10,001 nodes is a different quadrature from the midpoint rule under test
    t = np.linspace(0, 1, 10_001)
    g = input_gradient(m, b[None] + t[:, None] * (x - b)[None])
    ref = (x - b) * np.trapezoid(g, t, axis=0)
    assert np.max(np.abs(v.values - ref)) < 1e-3
    assert v.metadata["relative_residual"] < 1e-3
    gap = predict(m, x) - predict(m, b)
    assert abs(v.values.sum() - gap) / max(1, abs(gap)) < 1e-3


def test_ig_gru_sequence_completeness():
    rng = np.random.default_rng(14)
    n, L = 40, 3
    X = rng.standard_normal((n, L, 2))
    y = X[:, -1, 0] - 0.5 * X[:, 0, 1]
    m = fit_model(ModelSpec("gru", {"hidden": 3, "epochs": 60, "seq_len": L}), data_of(X, y, X[-1], names=("a", "b")))
    v = integrated_gradients(m, X[-1], "window_median", 256, window=X)
    assert v.values.shape == (2,)
    assert v.metadata["relative_residual"] < 1e-3


def test_ig_preshock_baseline_and_errors():
    m, X = affine_model()
    v = integrated_gradients(m, X[0], "preshock_mean", 16, preshock=X[:10])
    np.testing.assert_allclose(v.values, m.params["coef"] * (X[0] - X[:10].mean(0)), atol=1e-12)
    assert v.metadata["baseline"] == "preshock_mean"
    with pytest.raises(ValidationError):
        integrated_gradients(m, X[0], "window_median", 16)
    with pytest.raises(ValidationError):
        integrated_gradients(m, X[0], "zeros", 8)
    with pytest.raises(ValidationError):
        integrated_gradients(m, X[0], "mode", 16)
    assert "not economically interpretable" in integrated_gradients(m, X[0], "zeros", 16).metadata["note"]
    gb = fit_model(ModelSpec("gbdt", {"trees": 2}), data_of(X, X[:, 0]))
    with pytest.raises(UnsupportedModelError):
        integrated_gradients(gb, X[0], "zeros", 16)


# permutation ------------------------------------------------------------------

def test_block_permutation_keeps_blocks():
    perm = block_permutation(10, 3, np.random.default_rng(0))
    assert sorted(perm) == list(range(10))
    blocks = [tuple(perm[i:i + 1]) for i in range(10)]
    assert len(blocks) == 10
    starts = [i for i in range(10) if i == 0 or perm[i] != perm[i - 1] + 1]
    assert len(starts) <= 4


def test_identity_permutation_gives_exact_zero():
    rng = np.random.default_rng(15)
    X = rng.standard_normal((60, 3))
    y = X @ [1.0, 2.0, 0.0] + rng.standard_normal(60)
    m = fit_model(ModelSpec("ols"), data_of(X[:40], y[:40]))
    v = block_permutation_importance(m, X[40:], y[40:], L=20, repetitions=5)
    assert np.array_equal(v.values, np.zeros(3))


def noise_importance(seed):
    rng = keyed_rng(seed, "noise-test")
    X = rng.standard_normal((120, 3))
    y = 2 * X[:, 0] + X[:, 1] + rng.standard_normal(120)
    m = fit_model(ModelSpec("ols"), data_of(X[:80], y[:80]))
    return block_permutation_importance(m, X[80:], y[80:], L=4, seed=seed, repetitions=50).values[2]


def test_noise_feature_importance_centres_on_zero():
    vals = np.array([noise_importance(s) for s in range(30)])
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean()) < 2 * se


def test_decisive_feature_ranks_first():
    for seed in range(10):
        sim = simulate(DGPSpec("sparse_linear", 100, seed=seed, params={"p": 5, "s": 1, "sigma": 0.0}))
        m = fit_model(ModelSpec("ols"), data_of(sim.predictors[:70], sim.target[:70], names=sim.predictor_names))
        v = block_permutation_importance(m, sim.predictors[70:], sim.target[70:], L=3, seed=seed, repetitions=20)
        assert v.features[int(np.argmax(v.values))] == sim.truth["support"][0]


def test_duplicated_feature_splits_importance():
    rng = np.random.default_rng(16)
    x = rng.standard_normal(150)
    other = rng.standard_normal(150)
    y = 2 * x + 0.5 * other + 0.2 * rng.standard_normal(150)
    spec = ModelSpec("ridge", {"lambda": 0.1})
    solo = fit_model(spec, data_of(np.column_stack([x, other])[:100], y[:100]))
    dup = fit_model(spec, data_of(np.column_stack([x, x, other])[:100], y[:100]))
    a = block_permutation_importance(solo, np.column_stack([x, other])[100:], y[100:], 2).values
    b = block_permutation_importance(dup, np.column_stack([x, x, other])[100:], y[100:], 2).values
    assert b[0] < a[0] and b[1] < a[0]


def test_block_longer_than_evaluation_is_rejected():
    m, X = affine_model()
    with pytest.raises(ValidationError):
        block_permutation_importance(m, X[:5], np.zeros(5), L=6)


# bands, profiles, stability ---------------------------------------------------

def test_single_replicate_band_is_degenerate():
    rng = np.random.default_rng(17)
    X = rng.standard_normal((40, 3))
    prof = importance_bands(ModelSpec("ols"), data_of(X, X[:, 0] + rng.standard_normal(40)), "coefficients",
                            BlockBootstrapConfig(block_length=4, replicates=1))
    assert np.array_equal(prof.lower, prof.central) and np.array_equal(prof.upper, prof.central)


def test_random_walk_has_zero_importance():
    y = np.cumsum(np.random.default_rng(18).standard_normal(41))
    data = ModelData(y[:-1, None][:30], y[1:][:30], ("y_lag1",), y[30:31], float(y[30]))
    prof = importance_bands(ModelSpec("rw"), data, "permutation", BlockBootstrapConfig(block_length=3, replicates=9),
                            eval_data=(y[30:40, None], y[31:41]), block_length=2)
    assert np.all(prof.central == 0) and np.all(prof.upper - prof.lower == 0)


def test_true_support_bands_exclude_zero():
    hits = []
    for seed in range(10):
        sim = simulate(DGPSpec("sparse_linear", 80, seed=seed, params={"p": 8, "s": 3, "sigma": 0.5}))
        prof = importance_bands(ModelSpec("ols"), data_of(sim.predictors, sim.target, names=sim.predictor_names), "coefficients",
                                BlockBootstrapConfig(block_length=4, replicates=49, seed=seed))
        support = [prof.features.index(s) for s in sim.truth["support"]]
        hits.append(bool(prof.excludes_zero()[support].all()))
    assert np.mean(hits) >= 0.8


def vec(values, origin=None, meta=None, method="tree_shap", names=None):
    names = names or tuple(f"f{j}" for j in range(len(values)))
    return AttributionVector(origin, "m", method, names, np.asarray(values, float), metadata=meta or {})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-5, 5), min_size=3, max_size=3), min_size=1, max_size=12),
       st.floats(0.01, 0.5))
def test_profile_band_brackets_central(rows, alpha):
    prof = importance_profile([vec(r) for r in rows], alpha)
    assert np.all(prof.lower <= prof.central + 1e-12) and np.all(prof.central <= prof.upper + 1e-12)
    assert np.all((prof.sign_share >= 0) & (prof.sign_share <= 1))


def test_permutation_profile_floors_negatives():
    prof = importance_profile([vec([-0.2, 0.5], method="permutation")] * 3)
    np.testing.assert_array_equal(prof.central, [0.0, 0.5])


def test_identical_profiles_are_stable():
    vs = [vec([3.0, -1.0, 0.5, 0.1], date(2020, 1, 1 + k)) for k in range(5)]
    rep = stability_report(vs, {"f0": 1})
    assert np.all(rep.rank_correlations == 1.0) and np.all(rep.iqr == 0) and rep.flags == ()
    assert rep.inconsistent_features == ()


def test_sign_contradiction_is_listed():
    vs = [vec([1.0, -0.5 if k < 3 else 0.5]) for k in range(5)]
    rep = stability_report(vs, {"f0": 1, "f1": 1})
    assert rep.inconsistent_features == ("f1",)
    row = [r for r in rep.sign_table if r["feature"] == "f1"][0]
    assert row["contradiction_share"] == 0.6


def test_random_profiles_have_no_rank_correlation():
    rng = np.random.default_rng(19)
    base = np.arange(1.0, 21.0)
    vs = [vec(rng.permutation(base)) for _ in range(80)]
    rep = stability_report(vs)
    r = rep.rank_correlations
    assert abs(r.mean()) < 2 * r.std(ddof=1) / np.sqrt(len(r))
    assert np.all((r >= -1) & (r <= 1))


def test_rank_jump_flags_only_without_new_data():
    a = [10.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0]
    b = [1.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0]
    same = stability_report([vec(a, meta={"data_digest": "x"}), vec(b, meta={"data_digest": "x"})])
    assert same.flagged_features == ("f0",)
    moved = stability_report([vec(a, meta={"data_digest": "x"}), vec(b, meta={"data_digest": "y"})])
    assert moved.flags == ()


def test_stability_input_checks():
    with pytest.raises(ValidationError):
        stability_report([vec([1.0, 2.0])])
    with pytest.raises(ValidationError):
        stability_report([vec([1.0, 2.0]), vec([1.0, 2.0], names=("a", "b"))])
    assert rank_correlation([1, 1, 1], [1, 2, 3]) == 0.0


def test_attribution_csv_carries_metadata(tmp_path):
    m, X = affine_model()
    v = integrated_gradients(m, X[0], "zeros", 16, origin=date(2020, 5, 1))
    path = tmp_path / "attr.csv"
    write_attributions_csv(path, [v], config_hash="abc")
    lines = path.read_text().splitlines()
    assert len(lines) == 4 and "integrated_gradients" in lines[1] and lines[1].endswith("abc")
    assert '""steps"": 16' in lines[1]
