"""Random walks, AR, OLS, ridge and the elastic-net coordinate-descent solver."""
from __future__ import annotations

import numpy as np

from ..errors import ConvergenceError, SingularSystemError


def soft_threshold(z: float, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def _center(X, y):
    xm = X.mean(axis=0)
    ym = float(y.mean())
    return X - xm, y - ym, xm, ym


def fit_ols(X, y):
    """Least squares with an intercept. Requires full column rank."""
    n, f = X.shape
    if f == 0:
        return np.zeros(0), float(y.mean())
    Xc, yc, xm, ym = _center(X, y)
    if f >= n or np.linalg.matrix_rank(Xc) < f:
        raise SingularSystemError(f"ols needs full column rank: {f} columns, {n} rows, "
                                  f"rank {np.linalg.matrix_rank(Xc)}")
    beta = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    return beta, ym - float(xm @ beta)


def fit_ridge(X, y, lam):
    """Minimise ||y - a - Xb||^2 / (2n) + lam/2 ||b||^2 in closed form."""
    n, f = X.shape
    if f == 0:
        return np.zeros(0), float(y.mean())
    if lam == 0:
        return fit_ols(X, y)
    Xc, yc, xm, ym = _center(X, y)
    beta = np.linalg.solve(Xc.T @ Xc / n + lam * np.eye(f), Xc.T @ yc / n)
    return beta, ym - float(xm @ beta)


def enet_objective(X, y, beta, lam, alpha):
    r = y - X @ beta
    n = len(y)
    return float(r @ r / (2 * n) + lam * (alpha * np.abs(beta).sum() + 0.5 * (1 - alpha) * beta @ beta))


def duality_gap(X, y, beta, lam, alpha):
    """Elastic-net duality gap on centred data (the usual augmented-lasso form)."""
    n = len(y)
    r = y - X @ beta
    l1, l2 = lam * alpha, lam * (1 - alpha)
    primal = enet_objective(X, y, beta, lam, alpha)
    grad = X.T @ r / n - l2 * beta
    if l1 > 0:
        bound = np.abs(grad).max() if grad.size else 0.0
        s = min(1.0, l1 / bound) if bound > 0 else 1.0
    else:
        s = 1.0
    theta = s * r / n
    dual = -0.5 * n * float(theta @ theta) + float(theta @ y) - 0.5 * l2 * s * s * float(beta @ beta)
    return max(primal - dual, 0.0)


def coordinate_descent(X, y, lam, alpha=1.0, tol=1e-7, max_sweeps=10_000, beta0=None):
    """Cyclic coordinate descent for the elastic net on centred data.

    Objective: ||y - Xb||^2/(2n) + lam*(alpha*|b|_1 + (1-alpha)/2*|b|^2).
    Converged when a full sweep moves no coefficient by more than ``tol``;
    between full sweeps only the active set is cycled.
    Returns ``(beta, sweeps)``.
    """
    n, f = X.shape
    a = (X * X).sum(axis=0) / n
    beta = np.zeros(f) if beta0 is None else np.array(beta0, float)
    r = y - X @ beta
    l1, l2 = lam * alpha, lam * (1 - alpha)
    cols = [X[:, j].copy() for j in range(f)]
    sweeps = 0

    def sweep(idx):
        max_d = 0.0
        for j in idx:
            if a[j] == 0.0:
                continue
            bj = beta[j]
            z = float(cols[j] @ r) / n + a[j] * bj
            nb = soft_threshold(z, l1) / (a[j] + l2)
            d = nb - bj
            if d != 0.0:
                r[:] -= d * cols[j]
                beta[j] = nb
                max_d = max(max_d, abs(d))
        return max_d

    full = range(f)
    while sweeps < max_sweeps:
        change = sweep(full)
        sweeps += 1
        if change < tol:
            return beta, sweeps
        active = np.flatnonzero(beta)
        while sweeps < max_sweeps:
            change = sweep(active)
            sweeps += 1
            if change < tol:
                break
    raise ConvergenceError(
        f"coordinate descent did not converge in {max_sweeps} sweeps",
        gap=duality_gap(X, y, beta, lam, alpha), iterations=sweeps)


def fit_elastic_net(X, y, lam, alpha=1.0, tol=1e-7, max_sweeps=10_000):
    n, f = X.shape
    if f == 0:
        return np.zeros(0), float(y.mean()), 0
    Xc, yc, xm, ym = _center(X, y)
    beta, sweeps = coordinate_descent(Xc, yc, lam, alpha, tol, max_sweeps)
    return beta, ym - float(xm @ beta), sweeps


def lambda_max(X, y, alpha=1.0) -> float:
    """Smallest penalty that zeroes every coefficient."""
    Xc, yc, _, _ = _center(np.asarray(X, float), np.asarray(y, float))
    if Xc.shape[1] == 0:
        return 0.0
    return float(np.abs(Xc.T @ yc).max() / len(yc) / max(alpha, 1e-3))


def select_lambda(X, y, alpha=1.0, grid=None, train_share=0.7, n_grid=30, one_se=True):
    """Pick a penalty on a time-ordered holdout (earliest rows train).

    With ``one_se`` the largest penalty whose holdout loss is within one
    standard error of the best is returned.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n = len(y)
    cut = max(3, min(n - 2, int(round(train_share * n))))
    if grid is None:
        top = lambda_max(X[:cut], y[:cut], alpha)
        if top == 0:
            return 0.0
        grid = top * np.logspace(0, -3, n_grid)
    grid = np.sort(np.asarray(grid, float))[::-1]
    losses, ses = [], []
    beta = None
    for lam in grid:
        Xc, yc, xm, ym = _center(X[:cut], y[:cut])
        beta, _ = coordinate_descent(Xc, yc, lam, alpha, beta0=beta)
        err = y[cut:] - (ym - xm @ beta) - X[cut:] @ beta
        losses.append(float(np.mean(err ** 2)))
        ses.append(float(np.std(err ** 2, ddof=1) / np.sqrt(len(err))) if len(err) > 1 else 0.0)
    best = int(np.argmin(losses))
    if not one_se:
        return float(grid[best])
    limit = losses[best] + ses[best]
    for lam, loss in zip(grid, losses):
        if loss <= limit:
            return float(lam)
    return float(grid[best])


def fit_random_walk(X, y, anchor, drift: bool):
    """X[:, 0] is the previous target value, so y - X[:, 0] are first differences."""
    d = float(np.mean(y - X[:, 0])) if drift and len(y) else 0.0
    return float(anchor), d
