"""Principal-component regression and PLS1 via NIPALS."""
from __future__ import annotations

import numpy as np

from ..errors import ConvergenceError, ValidationError


def _rank_tol(s, shape):
    return s[0] * max(shape) * np.finfo(float).eps if s.size else 0.0


def fit_pcr(X, y, k):
    """Regress y on the k leading principal-component scores of centred X.

    Each loading vector is signed so its largest-absolute entry is positive.
    Returns a dict with the original-space coefficients and the pieces needed
    to inspect the components.
    """
    n, f = X.shape
    if k > min(n - 1, f):
        raise ValidationError(f"k={k} exceeds min(rows-1, columns)={min(n - 1, f)}")
    xm = X.mean(axis=0)
    ym = float(y.mean())
    Xc = X - xm
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    rank = int((s > _rank_tol(s, Xc.shape)).sum())
    if k > rank:
        raise ValidationError(f"k={k} exceeds the predictor rank {rank}")
    V = Vt[:k].T.copy()
    for j in range(k):
        i = int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0:
            V[:, j] = -V[:, j]
    T = Xc @ V
    gamma = np.linalg.solve(T.T @ T, T.T @ (y - ym))
    beta = V @ gamma
    var = s ** 2 / n
    total = var.sum()
    return {
        "coef": beta, "intercept": ym - float(xm @ beta), "loadings": V, "score_coef": gamma,
        "explained_variance": var[:k], "explained_ratio": var[:k] / total if total > 0 else np.zeros(k),
    }


def fit_plsr(X, y, k, tol=1e-12, max_iter=500):
    """PLS1 by NIPALS with deflation of both X and y.

    Stores weights W, X-loadings P, y-loadings q and scores T so VIP scores
    can be computed later.
    """
    n, f = X.shape
    if k > min(n - 1, f):
        raise ValidationError(f"k={k} exceeds min(rows-1, columns)={min(n - 1, f)}")
    xm = X.mean(axis=0)
    ym = float(y.mean())
    Xr = X - xm
    yr = y - ym
    scale = max(np.abs(Xr).max(), 1e-300) * max(np.abs(yr).max(), 1e-300) * n
    W = np.zeros((f, k))
    P = np.zeros((f, k))
    T = np.zeros((n, k))
    q = np.zeros(k)
    for a in range(k):
        u = yr.copy()
        w_old = None
        for _ in range(max_iter):
            w = Xr.T @ u
            norm = np.linalg.norm(w)
            if norm <= 1e-12 * scale:
                raise ValidationError(f"k={k} exceeds the attainable PLS rank ({a} components)")
            w = w / norm
            t = Xr @ w
            qa = float(yr @ t) / float(t @ t)
            u = yr / qa
            if w_old is not None and np.linalg.norm(w - w_old) < tol:
                break
            w_old = w
        else:
            raise ConvergenceError(f"NIPALS component {a + 1} did not converge in {max_iter} iterations",
                                   gap=float(np.linalg.norm(w - w_old)), iterations=max_iter)
        tt = float(t @ t)
        p = Xr.T @ t / tt
        Xr = Xr - np.outer(t, p)
        yr = yr - qa * t
        W[:, a], P[:, a], T[:, a], q[a] = w, p, t, qa
    R = W @ np.linalg.inv(P.T @ W)
    beta = R @ q
    return {"coef": beta, "intercept": ym - float(xm @ beta), "weights": W, "x_loadings": P,
            "y_loadings": q, "scores": T}


def vip(weights, y_loadings, scores):
    """Variable importance in projection from stored PLS quantities."""
    W = np.asarray(weights, float)
    q = np.asarray(y_loadings, float)
    T = np.asarray(scores, float)
    f = W.shape[0]
    ss = q ** 2 * (T * T).sum(axis=0)
    total = ss.sum()
    if total == 0:
        return np.zeros(f)
    wn = W / np.linalg.norm(W, axis=0)
    return np.sqrt(f * (wn ** 2 @ ss) / total)
