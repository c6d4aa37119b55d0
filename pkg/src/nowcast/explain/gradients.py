"""Integrated Gradients along the straight path from a baseline to the input."""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..models import input_gradient, predict_batch
from ..models.spec import FittedModel, as_input
from .attribution import AttributionVector

BASELINES = ("zeros", "window_median", "preshock_mean")
MIN_STEPS = 16


def resolve_baseline(model: FittedModel, baseline, window=None, preshock=None):
    """Baseline input plus a descriptor that is enough to rebuild it."""
    if isinstance(baseline, str):
        if baseline == "zeros":
            return _zero_input(model), {"baseline": "zeros", "note": "not economically interpretable"}
        if baseline == "window_median":
            if window is None:
                raise ValidationError("window_median baseline needs the calibration window rows")
            rows = np.asarray(window, float)
            return as_input(model, np.median(rows, axis=0)), {"baseline": "window_median", "rows": len(rows)}
        if baseline == "preshock_mean":
            if preshock is None or len(preshock) == 0:
                raise ValidationError("preshock_mean baseline needs the pre-shock rows")
            rows = np.asarray(preshock, float)
            return as_input(model, rows.mean(axis=0)), {"baseline": "preshock_mean", "rows": len(rows)}
        raise ValidationError(f"unknown baseline {baseline!r}; expected one of {BASELINES} or a vector")
    b = as_input(model, baseline)
    return b, {"baseline": "vector", "values": b.tolist()}


def _zero_input(model: FittedModel):
    f = len(model.feature_names)
    if model.family == "gru":
        return np.zeros((model.spec.hp("seq_len"), f))
    return np.zeros(f)


def path_integral(model: FittedModel, x, baseline, steps: int) -> np.ndarray:
    """Midpoint-rule Riemann sum of the gradient along baseline -> x, times (x - baseline)."""
    alphas = (np.arange(steps) + 0.5) / steps
    delta = x - baseline
    points = baseline[None] + alphas.reshape((-1,) + (1,) * x.ndim) * delta[None]
    grads = input_gradient(model, points)
    return delta * grads.mean(axis=0)


def integrated_gradients(model: FittedModel, x, baseline="window_median", steps: int = 64,
                         window=None, preshock=None, origin=None) -> AttributionVector:
    """Local attribution whose values sum to f(x) - f(baseline) up to the quadrature error.

    For sequence models the per-step attributions are summed over time for
    each feature. The completeness residual is kept in the metadata.
    """
    if steps < MIN_STEPS:
        raise ValidationError(f"steps must be >= {MIN_STEPS}")
    x = as_input(model, x)
    b, descriptor = resolve_baseline(model, baseline, window, preshock)
    ig = path_integral(model, x, b, steps)
    values = ig if ig.ndim == 1 else ig.sum(axis=0)
    fx, fb = predict_batch(model, np.stack([x, b]))
    gap = float(fx - fb)
    residual = gap - float(values.sum())
    meta = dict(descriptor)
    meta.update({"scope": "local", "steps": steps, "rule": "midpoint", "residual": residual,
                 "relative_residual": abs(residual) / max(1.0, abs(gap))})
    return AttributionVector(origin, model.model_id, "integrated_gradients", model.feature_names, values,
                             base_value=float(fb), prediction=float(fx), metadata=meta)
