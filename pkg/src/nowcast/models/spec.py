"""Model specifications, fitted-model container and family-specific data views."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..errors import ShapeError, ValidationError

FAMILIES = (
    "rw", "rw_drift", "ar", "ols", "ridge", "lasso", "elastic_net",
    "pcr", "plsr", "random_forest", "gbdt", "mlp", "gru",
)
UNIVARIATE = ("rw", "rw_drift", "ar")
LINEAR = ("ar", "ols", "ridge", "lasso", "elastic_net")
LATENT = ("pcr", "plsr")
TREES = ("random_forest", "gbdt")
NEURAL = ("mlp", "gru")

DEFAULTS: dict[str, dict[str, Any]] = {
    "rw": {},
    "rw_drift": {},
    "ar": {"p": 1},
    "ols": {},
    "ridge": {"lambda": 1.0},
    "lasso": {"lambda": 0.1, "tol": 1e-7, "max_sweeps": 10_000},
    "elastic_net": {"lambda": 0.1, "alpha": 0.5, "tol": 1e-7, "max_sweeps": 10_000},
    "pcr": {"k": 1},
    "plsr": {"k": 1, "tol": 1e-12, "max_iter": 500},
    "random_forest": {"trees": 100, "depth": 4, "min_leaf": 5, "max_features": 1 / 3, "bootstrap": True},
    "gbdt": {"trees": 100, "depth": 2, "min_leaf": 5, "learning_rate": 0.1, "subsample": 1.0},
    "mlp": {"hidden": [8], "epochs": 2000, "step_size": 0.05, "activation": "tanh", "dropout": 0.0},
    "gru": {"hidden": 4, "epochs": 300, "step_size": 0.05, "seq_len": 4},
}


@dataclass(frozen=True)
class ModelSpec:
    """Family tag, hyperparameters and seed of one portfolio member."""

    family: str
    hyperparams: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown model family {self.family!r}")
        unknown = set(self.hyperparams) - set(DEFAULTS[self.family])
        if unknown:
            raise ValidationError(f"{self.family}: unknown hyperparameters {sorted(unknown)}")
        merged = dict(DEFAULTS[self.family])
        merged.update(self.hyperparams)
        object.__setattr__(self, "hyperparams", merged)
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        self._validate()

    def _validate(self):
        hp = self.hyperparams
        if "lambda" in hp and hp["lambda"] != "auto" and not hp["lambda"] >= 0:
            raise ValidationError("lambda must be >= 0")
        if "alpha" in hp and not 0 <= hp["alpha"] <= 1:
            raise ValidationError("alpha must lie in [0, 1]")
        for key in ("p", "k", "trees", "depth", "min_leaf", "epochs", "seq_len"):
            if key in hp and (int(hp[key]) != hp[key] or hp[key] < 1):
                raise ValidationError(f"{key} must be a positive integer")
        if "learning_rate" in hp and not hp["learning_rate"] >= 0:
            raise ValidationError("learning_rate must be >= 0")
        if "subsample" in hp and not 0 < hp["subsample"] <= 1:
            raise ValidationError("subsample must lie in (0, 1]")
        if "dropout" in hp and not 0 <= hp["dropout"] < 1:
            raise ValidationError("dropout must lie in [0, 1)")
        if "step_size" in hp and not hp["step_size"] > 0:
            raise ValidationError("step_size must be > 0")

    @property
    def model_id(self) -> str:
        return self.name or self.family

    def hp(self, key: str):
        return self.hyperparams[key]

    def to_dict(self) -> dict:
        return {"family": self.family, "hyperparams": dict(self.hyperparams),
                "seed": self.seed, "name": self.name}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        return cls(d["family"], dict(d.get("hyperparams", {})), d.get("seed", 0), d.get("name"))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, default=str).encode()).hexdigest()


@dataclass(frozen=True)
class ModelData:
    """Training samples and the conditioning input for one forecast.

    ``X`` is ``(n, f)`` for static families and ``(n, seq_len, f)`` for the
    GRU. ``anchor`` is the last observed target, used by random walks.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    x_new: np.ndarray
    anchor: float | None = None
    periods: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return len(self.y)

    def take(self, idx, keep_periods: bool = False) -> "ModelData":
        idx = np.asarray(idx)
        periods = tuple(self.periods[i] for i in idx) if keep_periods and self.periods else ()
        return ModelData(self.X[idx], self.y[idx], self.feature_names, self.x_new, self.anchor, periods)

    def with_y(self, y) -> "ModelData":
        return ModelData(self.X, np.asarray(y, float), self.feature_names, self.x_new, self.anchor, self.periods)


@dataclass(frozen=True)
class FittedModel:
    spec: ModelSpec
    params: Mapping[str, Any]
    feature_names: tuple[str, ...]
    training_window: tuple[str, str] | None
    target_mean: float
    target_var: float
    feature_mean: np.ndarray
    feature_sd: np.ndarray
    train_loss: float

    @property
    def family(self) -> str:
        return self.spec.family

    @property
    def model_id(self) -> str:
        return self.spec.model_id


def lag_embedding(history, p: int):
    """Rows ``(y[t-1], ..., y[t-p]) -> y[t]`` plus the conditioning row for t = n."""
    y = np.asarray(history, float)
    n = len(y)
    if p >= n:
        raise ValidationError(f"lag order p={p} must be smaller than the history length {n}")
    X = np.column_stack([y[p - j - 1:n - j - 1] for j in range(p)])
    x_new = y[::-1][:p].copy()
    return X, y[p:].copy(), x_new


def prepare_data(spec: ModelSpec, design) -> ModelData:
    """Build the family-appropriate training view of a DesignMatrix."""
    fam = spec.family
    if fam in UNIVARIATE:
        p = spec.hp("p") if fam == "ar" else 1
        hist = np.asarray(design.target_history, float)
        X, y, x_new = lag_embedding(hist, p)
        periods = tuple(design.target_history_periods[p:])
        names = tuple(f"y_lag{j + 1}" for j in range(p))
        return ModelData(X, y, names, x_new, float(hist[-1]), periods)
    X = np.asarray(design.X, float)
    y = np.asarray(design.y, float)
    names = tuple(design.feature_names)
    if fam == "gru":
        L = spec.hp("seq_len")
        n = len(y)
        if n < L:
            raise ValidationError(f"gru needs at least seq_len={L} rows, got {n}")
        seqs = np.stack([X[i - L + 1:i + 1] for i in range(L - 1, n)])
        x_new = np.vstack([X[n - L + 1:], np.asarray(design.x_new, float)[None, :]])
        return ModelData(seqs, y[L - 1:], names, x_new, float(y[-1]), tuple(design.target_periods[L - 1:]))
    return ModelData(X, y, names, np.asarray(design.x_new, float), float(y[-1]), tuple(design.target_periods))


def as_input(model: FittedModel, x) -> np.ndarray:
    """Order a feature row (or sequence) by the model's feature names."""
    names = model.feature_names
    if isinstance(x, Mapping):
        if set(x) != set(names):
            raise ShapeError(f"feature names {sorted(x)} do not match model features {list(names)}")
        x = np.stack([np.asarray(x[k], float) for k in names], axis=-1)
    x = np.asarray(x, float)
    if x.shape[-1] != len(names):
        raise ShapeError(f"expected {len(names)} features, got shape {x.shape}")
    if model.family == "gru":
        L = model.spec.hp("seq_len")
        if x.ndim != 2 or x.shape[0] != L:
            raise ShapeError(f"gru expects a ({L}, {len(names)}) sequence, got {x.shape}")
    elif x.ndim != 1:
        raise ShapeError(f"expected a single feature row, got shape {x.shape}")
    return x
