"""CART regression trees, random forests and gradient boosting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._rng import keyed_rng
from ..errors import ValidationError

LEAF = -1


@dataclass(frozen=True)
class Tree:
    """Array-encoded binary regression tree.

    Node 0 is the root. ``feature[i] == -1`` marks a leaf. Rows with
    ``x[feature] < threshold`` go left. ``cover`` is the training weight
    reaching each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, i) -> bool:
        return self.feature[i] == LEAF

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        node = np.zeros(len(X), int)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f != LEAF
            if not inner.any():
                return self.value[node]
            go_left = X[rows, np.where(inner, f, 0)] < self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def depth(self) -> int:
        def rec(i):
            return 0 if self.feature[i] == LEAF else 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "cover")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        ints = ("feature", "left", "right")
        return cls(**{k: np.asarray(d[k], int if k in ints else float)
                      for k in ("feature", "threshold", "left", "right", "value", "cover")})


def best_split(X, y, idx, features, min_leaf):
    """Variance-reduction split over ``features`` for rows ``idx``.

    Returns ``(feature, threshold, gain)`` or None. Equal gains keep the
    lowest feature index, then the lowest threshold. Thresholds are midpoints
    between consecutive distinct values.
    """
    n = len(idx)
    if n < 2 * min_leaf:
        return None
    yy = y[idx]
    yc = yy - yy.mean()
    sse = float(yc @ yc)
    if sse <= 0:
        return None
    best = None
    pos = np.arange(min_leaf - 1, n - min_leaf)
    nl = pos + 1.0
    nr = n - nl
    for f in sorted(features):
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        cs = np.cumsum(yc[order])
        valid = xs[pos] < xs[pos + 1]
        if not valid.any():
            continue
        sl = cs[pos]
        gain = sl * sl / nl + sl * sl / nr  # total of centred y is zero
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        g = float(gain[i])
        if g <= sse * 1e-12:
            continue
        if best is None or g > best[2]:
            thr = 0.5 * (xs[pos[i]] + xs[pos[i] + 1])
            if not xs[pos[i]] < thr:  # adjacent floats
                thr = xs[pos[i] + 1]
            best = (f, float(thr), g)
    return best


def grow_tree(X, y, depth, min_leaf, rng=None, max_features=None, idx=None) -> Tree:
    """Grow a CART tree to at most ``depth`` levels with ``min_leaf`` rows per leaf.

    When ``max_features`` < number of columns, each node draws its candidate
    features from ``rng`` without replacement.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, f = X.shape
    idx = np.arange(n) if idx is None else np.asarray(idx)
    if len(idx) < min_leaf:
        raise ValidationError(f"min_leaf={min_leaf} exceeds the sample size {len(idx)}")
    m = f if max_features is None else max_features
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def node(rows, level):
        i = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[rows].mean()))
        cover.append(float(len(rows)))
        if level >= depth:
            return i
        cand = range(f) if m >= f else rng.choice(f, size=m, replace=False)
        split = best_split(X, y, rows, cand, min_leaf)
        if split is None:
            return i
        fj, thr, _ = split
        go_left = X[rows, fj] < thr
        feature[i] = fj
        threshold[i] = thr
        left[i] = node(rows[go_left], level + 1)
        right[i] = node(rows[~go_left], level + 1)
        return i

    node(idx, 0)
    return Tree(np.array(feature, int), np.array(threshold), np.array(left, int),
                np.array(right, int), np.array(value), np.array(cover))


def n_candidate_features(max_features, f) -> int:
    if max_features is None:
        return f
    if isinstance(max_features, float) and max_features <= 1.0:
        return max(1, int(round(max_features * f)))
    return max(1, min(f, int(max_features)))


def fit_random_forest(X, y, trees, depth, min_leaf, max_features, bootstrap, seed):
    n, f = X.shape
    m = n_candidate_features(max_features, f)
    out = []
    for t in range(trees):
        rng = keyed_rng(seed, "forest", t)
        idx = rng.integers(0, n, n) if bootstrap else np.arange(n)
        out.append(grow_tree(X, y, depth, min_leaf, rng, m, np.sort(idx)))
    return out


def forest_predict(trees, X) -> np.ndarray:
    return np.mean([t.predict(X) for t in trees], axis=0)


def fit_gbdt(X, y, trees, depth, min_leaf, learning_rate, subsample, seed):
    """Least-squares boosting from mean(y) with exact leaf means.

    Returns ``(init, trees, losses)`` where ``losses[r]`` is the in-sample
    mean squared error after r rounds.
    """
    n = len(y)
    init = float(y.mean())
    F = np.full(n, init)
    out = []
    losses = [float(np.mean((y - F) ** 2))]
    k = max(min_leaf, int(round(subsample * n)))
    for t in range(trees):
        resid = y - F
        if subsample < 1.0:
            idx = np.sort(keyed_rng(seed, "boost", t).choice(n, size=min(k, n), replace=False))
        else:
            idx = np.arange(n)
        tree = grow_tree(X, resid, depth, min_leaf, idx=idx)
        out.append(tree)
        F = F + learning_rate * tree.predict(X)
        losses.append(float(np.mean((y - F) ** 2)))
    return init, out, losses


def gbdt_predict(init, trees, learning_rate, X) -> np.ndarray:
    X = np.atleast_2d(X)
    F = np.full(len(X), init)
    for t in trees:
        F = F + learning_rate * t.predict(X)
    return F
