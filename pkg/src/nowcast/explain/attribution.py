"""Attribution container, coefficient-based importances and VIP."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import UnsupportedModelError, ValidationError
from ..models import linear_representation, predict
from ..models.latent import vip
from ..models.spec import FittedModel, as_input

METHODS = ("coefficients", "vip", "permutation", "tree_shap", "integrated_gradients")
SIGNED = ("coefficients", "tree_shap", "integrated_gradients")


@dataclass(frozen=True)
class AttributionVector:
    """Per-feature attribution from one model at one origin.

    ``base_value`` is set only for additive local methods, where
    ``base_value + sum(values)`` reconstructs ``prediction``.
    """

    origin: date | None
    model_id: str
    method: str
    features: tuple[str, ...]
    values: np.ndarray
    base_value: float | None = None
    prediction: float | None = None
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown attribution method {self.method!r}")
        values = np.asarray(self.values, float)
        if values.shape != (len(self.features),):
            raise ValidationError("one attribution value per feature is required")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "features", tuple(self.features))

    @property
    def signed(self) -> bool:
        return self.method in SIGNED

    @property
    def additive(self) -> bool:
        return self.method in SIGNED and self.base_value is not None

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.features, map(float, self.values)))

    def ranks(self) -> np.ndarray:
        """1-based rank of each feature by |value|, largest first. Ties keep feature order."""
        order = np.argsort(-np.abs(self.values), kind="stable")
        r = np.empty(len(order), int)
        r[order] = np.arange(1, len(order) + 1)
        return r

    def top(self, k: int = 10) -> list[tuple[str, float]]:
        order = np.argsort(-np.abs(self.values), kind="stable")[:k]
        return [(self.features[i], float(self.values[i])) for i in order]

    def to_dict(self) -> dict:
        return {
            "origin": self.origin.isoformat() if self.origin else None,
            "model_id": self.model_id,
            "method": self.method,
            "values": self.as_dict(),
            "base_value": self.base_value,
            "prediction": self.prediction,
            "metadata": dict(self.metadata),
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, default=str).encode()).hexdigest()


def _require_linear(model: FittedModel):
    rep = linear_representation(model)
    if rep is None:
        raise UnsupportedModelError(f"{model.family} has no coefficient representation")
    return rep


def coefficient_importance(model: FittedModel, origin=None) -> AttributionVector:
    """Coefficients scaled by the training standard deviation of each feature."""
    coef, _ = _require_linear(model)
    values = coef * np.asarray(model.feature_sd, float)
    return AttributionVector(origin, model.model_id, "coefficients", model.feature_names, values,
                             metadata={"scope": "global", "scale": "training_sd"})


def linear_contributions(model: FittedModel, x, origin=None) -> AttributionVector:
    """Local additive split of a linear forecast around the training mean.

    ``phi_j = coef_j * (x_j - mean_j)``; the base value is the forecast at the
    training mean, so base + sum(phi) is the forecast exactly up to rounding.
    """
    coef, intercept = _require_linear(model)
    x = as_input(model, x)
    mean = np.asarray(model.feature_mean, float)
    values = coef * (x - mean)
    base = intercept + float(coef @ mean)
    return AttributionVector(origin, model.model_id, "coefficients", model.feature_names, values,
                             base_value=base, prediction=predict(model, x),
                             metadata={"scope": "local", "reference": "training_mean"})


def vip_scores(model: FittedModel, origin=None) -> AttributionVector:
    if model.family != "plsr":
        raise UnsupportedModelError(f"VIP is defined for plsr models, not {model.family}")
    p = model.params
    values = vip(p["weights"], p["y_loadings"], p["scores"])
    return AttributionVector(origin, model.model_id, "vip", model.feature_names, values,
                             metadata={"scope": "global", "components": int(np.shape(p["weights"])[1])})


ATTRIBUTION_HEADER = ["origin", "model_id", "method", "feature", "value", "base_value", "prediction",
                      "metadata", "config_hash"]


def write_attributions_csv(path, vectors: Sequence[AttributionVector], config_hash: str = "") -> None:
    """Long format, one row per (vector, feature). Metadata travels as a JSON column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ATTRIBUTION_HEADER)
        for v in vectors:
            meta = json.dumps(dict(v.metadata), sort_keys=True, default=str)
            origin = v.origin.isoformat() if v.origin else ""
            for name, val in zip(v.features, v.values):
                w.writerow([origin, v.model_id, v.method, name, repr(float(val)),
                            "" if v.base_value is None else repr(float(v.base_value)),
                            "" if v.prediction is None else repr(float(v.prediction)), meta, config_hash])
