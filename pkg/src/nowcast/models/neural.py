"""Feed-forward MLP and a single-layer GRU with hand-written backpropagation.

Both networks act on internally standardised inputs and target; the
scalers are stored with the weights so predictions are in original units.
Loss is half the mean squared error of the standardised target.
"""
from __future__ import annotations

import numpy as np

from .._rng import keyed_rng
from ..errors import DivergenceError, ValidationError

ACTIVATIONS = ("tanh", "relu", "identity")


def _act(name, a):
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "identity":
        return a
    raise ValidationError(f"unknown activation {name!r}")


def _act_grad(name, a, h):
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        return (a > 0).astype(float)
    return np.ones_like(a)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def init_mlp(sizes, rng):
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        params.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def mlp_forward(params, Z, activation, masks=None):
    """Return the network output and the per-layer caches."""
    h = Z
    cache = []
    n_layers = len(params) // 2
    for layer in range(n_layers):
        W, b = params[2 * layer], params[2 * layer + 1]
        a = h @ W + b
        if layer == n_layers - 1:
            cache.append((h, a, None, None))
            return a[:, 0], cache
        out = _act(activation, a)
        m = None if masks is None else masks[layer]
        cache.append((h, a, out, m))
        h = out if m is None else out * m
    raise AssertionError("unreachable")


def mlp_loss_grad(params, Z, t, activation, masks=None):
    """Half mean squared error and its gradient with respect to every parameter."""
    n = len(t)
    out, cache = mlp_forward(params, Z, activation, masks)
    err = out - t
    loss = 0.5 * float(err @ err) / n
    grads = [None] * len(params)
    delta = (err / n)[:, None]
    for layer in range(len(cache) - 1, -1, -1):
        h_in, a, h_out, m = cache[layer]
        if layer < len(cache) - 1:
            if m is not None:
                delta = delta * m
            delta = delta * _act_grad(activation, a, h_out)
        grads[2 * layer] = h_in.T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        delta = delta @ params[2 * layer].T
    return loss, grads


def mlp_input_grad(params, Z, activation):
    """d output / d input for each row of Z, no dropout."""
    out, cache = mlp_forward(params, Z, activation)
    delta = np.ones((len(Z), 1))
    for layer in range(len(cache) - 1, -1, -1):
        h_in, a, h_out, _ = cache[layer]
        if layer < len(cache) - 1:
            delta = delta * _act_grad(activation, a, h_out)
        delta = delta @ params[2 * layer].T
    return delta


def _scalers(X, y):
    axes = tuple(range(X.ndim - 1))
    xm = X.mean(axis=axes)
    xs = X.std(axis=axes)
    xs = np.where(xs > 0, xs, 1.0)
    ym = float(y.mean())
    ys = float(y.std()) or 1.0
    return xm, xs, ym, ys


def _descend(params, loss_grad, epochs, step, what):
    loss = float("nan")
    for epoch in range(1, epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = loss_grad(epoch)
        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
            raise DivergenceError(f"{what} training diverged at epoch {epoch}", epoch)
        for p, g in zip(params, grads):
            p -= step * g
    return loss


def fit_mlp(X, y, hidden, epochs, step_size, activation, dropout, seed):
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValidationError("mlp inputs must be finite")
    hidden = [int(h) for h in (hidden if isinstance(hidden, (list, tuple)) else [hidden])]
    xm, xs, ym, ys = _scalers(X, y)
    Z = (X - xm) / xs
    t = (y - ym) / ys
    params = init_mlp([X.shape[1], *hidden, 1], keyed_rng(seed, "mlp_init"))

    def loss_grad(epoch):
        masks = None
        if dropout > 0:
            rng = keyed_rng(seed, "dropout", epoch)
            masks = [(rng.random((len(Z), h)) >= dropout) / (1.0 - dropout) for h in hidden]
        return mlp_loss_grad(params, Z, t, activation, masks)

    _descend(params, loss_grad, epochs, step_size, "mlp")
    out, _ = mlp_forward(params, Z, activation)
    pred = ym + ys * out
    if not np.isfinite(pred).all():
        raise DivergenceError(f"mlp training diverged at epoch {epochs}", epochs)
    return {"weights": params, "activation": activation, "x_mean": xm, "x_scale": xs,
            "y_mean": ym, "y_scale": ys, "train_loss": float(np.mean((pred - y) ** 2))}


def mlp_predict(p, X):
    Z = (np.atleast_2d(X) - p["x_mean"]) / p["x_scale"]
    out, _ = mlp_forward(p["weights"], Z, p["activation"])
    return p["y_mean"] + p["y_scale"] * out


def mlp_gradient(p, X):
    """d prediction / d x in original units, one row per input row."""
    Z = (np.atleast_2d(X) - p["x_mean"]) / p["x_scale"]
    return p["y_scale"] * mlp_input_grad(p["weights"], Z, p["activation"]) / p["x_scale"]


# GRU ---------------------------------------------------------------------
# z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br)
# c = tanh(x Wh + (r * h) Uh + bh), h' = (1 - z) * h + z * c
# output = h_L v + c0

GRU_KEYS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh", "v", "c0")


def init_gru(f, h, rng):
    s_in, s_h = 1.0 / np.sqrt(f), 1.0 / np.sqrt(h)
    p = {}
    for g in "zrh":
        p["W" + g] = rng.normal(0.0, s_in, (f, h))
        p["U" + g] = rng.normal(0.0, s_h, (h, h))
        p["b" + g] = np.zeros(h)
    p["v"] = rng.normal(0.0, s_h, h)
    p["c0"] = np.zeros(1)
    return p


def gru_forward(p, Z):
    """Z has shape (n, L, f). Returns output (n,) and the step caches."""
    n, L, _ = Z.shape
    h = np.zeros((n, p["Uz"].shape[0]))
    cache = []
    for s in range(L):
        x = Z[:, s]
        z = _sigmoid(x @ p["Wz"] + h @ p["Uz"] + p["bz"])
        r = _sigmoid(x @ p["Wr"] + h @ p["Ur"] + p["br"])
        c = np.tanh(x @ p["Wh"] + (r * h) @ p["Uh"] + p["bh"])
        cache.append((x, h, z, r, c))
        h = (1.0 - z) * h + z * c
    return h @ p["v"] + p["c0"][0], cache, h


def _gru_backward(p, cache, h_last, dout):
    g = {k: np.zeros_like(v) for k, v in p.items()}
    g["v"] = h_last.T @ dout
    g["c0"] = np.array([dout.sum()])
    dh = np.outer(dout, p["v"])
    dZ = []
    for x, h_prev, z, r, c in reversed(cache):
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        da_h = dc * (1.0 - c * c)
        g["Wh"] += x.T @ da_h
        g["Uh"] += (r * h_prev).T @ da_h
        g["bh"] += da_h.sum(axis=0)
        d_rh = da_h @ p["Uh"].T
        dr = d_rh * h_prev
        dh_prev += d_rh * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        g["Wz"] += x.T @ da_z
        g["Uz"] += h_prev.T @ da_z
        g["bz"] += da_z.sum(axis=0)
        g["Wr"] += x.T @ da_r
        g["Ur"] += h_prev.T @ da_r
        g["br"] += da_r.sum(axis=0)
        dh_prev += da_z @ p["Uz"].T + da_r @ p["Ur"].T
        dZ.append(da_h @ p["Wh"].T + da_z @ p["Wz"].T + da_r @ p["Wr"].T)
        dh = dh_prev
    return g, np.stack(dZ[::-1], axis=1)


def gru_loss_grad(p, Z, t):
    n = len(t)
    out, cache, h = gru_forward(p, Z)
    err = out - t
    g, _ = _gru_backward(p, cache, h, err / n)
    return 0.5 * float(err @ err) / n, g


def fit_gru(X, y, hidden, epochs, step_size, seed):
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if X.ndim != 3:
        raise ValidationError("gru expects (samples, seq_len, features) input")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValidationError("gru inputs must be finite")
    xm, xs, ym, ys = _scalers(X, y)
    Z = (X - xm) / xs
    t = (y - ym) / ys
    p = init_gru(X.shape[2], int(hidden), keyed_rng(seed, "gru_init"))
    keys = list(GRU_KEYS)

    def loss_grad(epoch):
        loss, g = gru_loss_grad(p, Z, t)
        return loss, [g[k] for k in keys]

    _descend([p[k] for k in keys], loss_grad, epochs, step_size, "gru")
    out, _, _ = gru_forward(p, Z)
    pred = ym + ys * out
    return {"weights": p, "x_mean": xm, "x_scale": xs, "y_mean": ym, "y_scale": ys,
            "train_loss": float(np.mean((pred - y) ** 2))}


def gru_predict(p, X):
    X = np.asarray(X, float)
    if X.ndim == 2:
        X = X[None]
    out, _, _ = gru_forward(p["weights"], (X - p["x_mean"]) / p["x_scale"])
    return p["y_mean"] + p["y_scale"] * out


def gru_gradient(p, X):
    """d prediction / d sequence input, shape (n, L, f), original units."""
    X = np.asarray(X, float)
    if X.ndim == 2:
        X = X[None]
    w = p["weights"]
    _, cache, h = gru_forward(w, (X - p["x_mean"]) / p["x_scale"])
    _, dZ = _gru_backward(w, cache, h, np.ones(len(X)))
    return p["y_scale"] * dZ / p["x_scale"]
