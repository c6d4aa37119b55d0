"""Exact path-dependent Shapley values for regression trees and tree ensembles.

The recursion follows the polynomial-time TreeExplainer algorithm: a path of
unique features is extended at each split and unwound when a feature repeats,
so every leaf contributes its value weighted by the Shapley kernel of the
coalitions that reach it. Missing features follow both branches in
proportion to training cover.
"""
from __future__ import annotations

import numpy as np

from ..errors import UnsupportedModelError
from ..models import predict
from ..models.spec import FittedModel, as_input
from ..models.trees import LEAF, Tree
from .attribution import AttributionVector


def _extend(path, zero, one, feature):
    """Append a feature to the path and update the permutation weights."""
    depth = len(path)
    path = [list(e) for e in path]
    path.append([feature, zero, one, 1.0 if depth == 0 else 0.0])
    for i in range(depth - 1, -1, -1):
        path[i + 1][3] += one * path[i][3] * (i + 1) / (depth + 1)
        path[i][3] = zero * path[i][3] * (depth - i) / (depth + 1)
    return path


def _unwind(path, k):
    """Undo the extension of element ``k``."""
    depth = len(path) - 1
    _, zero, one, _ = path[k]
    path = [list(e) for e in path]
    carry = path[depth][3]
    for i in range(depth - 1, -1, -1):
        if one != 0:
            w = path[i][3]
            path[i][3] = carry * (depth + 1) / ((i + 1) * one)
            carry = w - path[i][3] * zero * (depth - i) / (depth + 1)
        else:
            path[i][3] = path[i][3] * (depth + 1) / (zero * (depth - i))
    for i in range(k, depth):
        path[i][:3] = path[i + 1][:3]
    return path[:depth]


def _unwound_sum(path, k):
    """Total weight of the path with element ``k`` removed, without mutating it."""
    depth = len(path) - 1
    _, zero, one, _ = path[k]
    carry = path[depth][3]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0:
            w = carry * (depth + 1) / ((i + 1) * one)
            total += w
            carry = path[i][3] - w * zero * (depth - i) / (depth + 1)
        else:
            total += path[i][3] / zero * (depth + 1) / (depth - i)
    return total


def tree_shap_values(tree: Tree, x) -> tuple[np.ndarray, float]:
    """``(phi, base)`` for a single tree. ``base`` is the cover-weighted mean leaf value."""
    x = np.asarray(x, float)
    phi = np.zeros(len(x))

    def recurse(node, path, zero, one, feature):
        path = _extend(path, zero, one, feature)
        d = tree.feature[node]
        if d == LEAF:
            v = tree.value[node]
            for i in range(1, len(path)):
                w = _unwound_sum(path, i)
                phi[path[i][0]] += w * (path[i][2] - path[i][1]) * v
            return
        hot, cold = ((tree.left[node], tree.right[node]) if x[d] < tree.threshold[node]
                     else (tree.right[node], tree.left[node]))
        iz = io = 1.0
        for k in range(1, len(path)):
            if path[k][0] == d:
                iz, io = path[k][1], path[k][2]
                path = _unwind(path, k)
                break
        cover = tree.cover[node]
        recurse(hot, path, iz * tree.cover[hot] / cover, io, d)
        recurse(cold, path, iz * tree.cover[cold] / cover, 0.0, d)

    recurse(0, [], 1.0, 1.0, -1)
    return phi, expected_value(tree)


def expected_value(tree: Tree) -> float:
    leaves = tree.feature == LEAF
    return float(tree.value[leaves] @ tree.cover[leaves] / tree.cover[0])


def ensemble_shap(trees, x, scale: float, init: float = 0.0) -> tuple[np.ndarray, float]:
    """Sum of per-tree attributions, each scaled by ``scale``, plus ``init`` in the base."""
    phi = np.zeros(len(x))
    base = init
    for t in trees:
        p, b = tree_shap_values(t, x)
        phi += scale * p
        base += scale * b
    return phi, base


def tree_shap(model: FittedModel, x, origin=None) -> AttributionVector:
    """Local Shapley attribution of a random forest or boosted ensemble forecast."""
    p = model.params
    x = as_input(model, x)
    if model.family == "random_forest":
        phi, base = ensemble_shap(p["trees"], x, 1.0 / len(p["trees"]))
    elif model.family == "gbdt":
        phi, base = ensemble_shap(p["trees"], x, p["learning_rate"], p["init"])
    else:
        raise UnsupportedModelError(f"tree_shap needs a tree ensemble, got {model.family}")
    return AttributionVector(origin, model.model_id, "tree_shap", model.feature_names, phi,
                             base_value=float(base), prediction=predict(model, x),
                             metadata={"scope": "local", "weighting": "path_dependent_cover"})
