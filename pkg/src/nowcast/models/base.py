"""Uniform fit/predict contract over every model family, plus JSON serialization."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import UnsupportedModelError, ValidationError
from . import latent, linear, neural, trees
from .spec import LATENT, LINEAR, FittedModel, ModelData, ModelSpec, as_input

FORMAT = "nowcast-model"
FORMAT_VERSION = 1


def _fit_params(spec: ModelSpec, X, y, data: ModelData):
    fam, hp = spec.family, spec.hyperparams
    if fam in ("rw", "rw_drift"):
        anchor, drift = linear.fit_random_walk(X, y, data.anchor, fam == "rw_drift")
        return {"anchor": anchor, "drift": drift}
    if fam in ("ar", "ols"):
        coef, b0 = linear.fit_ols(X, y)
        return {"coef": coef, "intercept": b0}
    if fam in ("ridge", "lasso", "elastic_net"):
        alpha = {"ridge": 0.0, "lasso": 1.0}.get(fam, hp.get("alpha"))
        lam = hp["lambda"]
        if lam == "auto":
            lam = linear.select_lambda(X, y, alpha=max(alpha, 1e-3))
        if fam == "ridge":
            coef, b0 = linear.fit_ridge(X, y, lam)
            return {"coef": coef, "intercept": b0, "lambda": float(lam)}
        coef, b0, sweeps = linear.fit_elastic_net(X, y, lam, alpha, hp["tol"], hp["max_sweeps"])
        return {"coef": coef, "intercept": b0, "lambda": float(lam), "sweeps": sweeps}
    if fam == "pcr":
        return latent.fit_pcr(X, y, hp["k"])
    if fam == "plsr":
        return latent.fit_plsr(X, y, hp["k"], hp["tol"], hp["max_iter"])
    if fam == "random_forest":
        return {"trees": trees.fit_random_forest(X, y, hp["trees"], hp["depth"], hp["min_leaf"],
                                                 hp["max_features"], hp["bootstrap"], spec.seed)}
    if fam == "gbdt":
        init, ts, losses = trees.fit_gbdt(X, y, hp["trees"], hp["depth"], hp["min_leaf"],
                                          hp["learning_rate"], hp["subsample"], spec.seed)
        return {"init": init, "trees": ts, "learning_rate": hp["learning_rate"], "losses": np.array(losses)}
    if fam == "mlp":
        return neural.fit_mlp(X, y, hp["hidden"], hp["epochs"], hp["step_size"], hp["activation"],
                              hp["dropout"], spec.seed)
    if fam == "gru":
        return neural.fit_gru(X, y, hp["hidden"], hp["epochs"], hp["step_size"], spec.seed)
    raise UnsupportedModelError(fam)


def fit_model(spec: ModelSpec, data: ModelData) -> FittedModel:
    """Fit ``spec`` on prepared data. Pure in (spec, data)."""
    X = np.asarray(data.X, float)
    y = np.asarray(data.y, float)
    if len(y) == 0:
        raise ValidationError("cannot fit on an empty sample")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValidationError("training data must be finite")
    params = _fit_params(spec, X, y, data)
    axes = tuple(range(X.ndim - 1))
    window = (data.periods[0], data.periods[-1]) if data.periods else None
    model = FittedModel(spec, params, tuple(data.feature_names), window, float(y.mean()), float(y.var()),
                        X.mean(axis=axes), X.std(axis=axes), float("nan"))
    loss = float(np.mean((y - fitted_values(model, X)) ** 2))
    return FittedModel(spec, params, model.feature_names, window, model.target_mean, model.target_var,
                       model.feature_mean, model.feature_sd, loss)


def predict_batch(model: FittedModel, X) -> np.ndarray:
    """Forecasts for a stack of rows (or sequences for the GRU)."""
    fam, p = model.family, model.params
    X = np.asarray(X, float)
    if fam in ("rw", "rw_drift"):
        return np.full(len(X), p["anchor"] + p["drift"])
    if fam in LINEAR or fam in LATENT:
        return p["intercept"] + X @ p["coef"]
    if fam == "random_forest":
        return trees.forest_predict(p["trees"], X)
    if fam == "gbdt":
        return trees.gbdt_predict(p["init"], p["trees"], p["learning_rate"], X)
    if fam == "mlp":
        return neural.mlp_predict(p, X)
    if fam == "gru":
        return neural.gru_predict(p, X)
    raise UnsupportedModelError(fam)


def fitted_values(model: FittedModel, X) -> np.ndarray:
    """In-sample one-step fits. Random walks step from each row's own lag."""
    if model.family in ("rw", "rw_drift"):
        return np.asarray(X, float)[:, 0] + model.params["drift"]
    return predict_batch(model, X)


def predict(model: FittedModel, x) -> float:
    """One-quarter-ahead forecast for a single feature row (or sequence)."""
    x = as_input(model, x)
    return float(predict_batch(model, x[None])[0])


def linear_representation(model: FittedModel):
    """``(coef, intercept)`` in original feature space, or None for nonlinear families."""
    if model.family in LINEAR or model.family in LATENT:
        return np.asarray(model.params["coef"]), float(model.params["intercept"])
    return None


def input_gradient(model: FittedModel, X) -> np.ndarray:
    """d prediction / d input, row-wise."""
    fam = model.family
    X = np.asarray(X, float)
    if fam == "mlp":
        return neural.mlp_gradient(model.params, X)
    if fam == "gru":
        return neural.gru_gradient(model.params, X)
    rep = linear_representation(model)
    if rep is not None:
        return np.broadcast_to(rep[0], X.shape).copy()
    raise UnsupportedModelError(f"{fam} is not differentiable")


# serialization -------------------------------------------------------------

def _encode(obj):
    if isinstance(obj, trees.Tree):
        return {"__tree__": obj.to_dict()}
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist(), "dtype": obj.dtype.str, "shape": list(obj.shape)}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__tree__" in obj:
            return trees.Tree.from_dict(obj["__tree__"])
        if "__array__" in obj:
            return np.asarray(obj["__array__"], dtype=np.dtype(obj["dtype"])).reshape(obj["shape"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def dumps_model(model: FittedModel) -> str:
    """Versioned JSON text: family tag, hyperparameters and parameter payload."""
    doc = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "family": model.family,
        "spec": model.spec.to_dict(),
        "feature_names": list(model.feature_names),
        "training_window": list(model.training_window) if model.training_window else None,
        "target_stats": {"mean": model.target_mean, "variance": model.target_var},
        "feature_stats": {"mean": _encode(model.feature_mean), "sd": _encode(model.feature_sd)},
        "train_loss": model.train_loss,
        "params": _encode(dict(model.params)),
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def loads_model(text: str) -> FittedModel:
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise ValidationError("not a serialized model")
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported model format version {doc.get('version')}")
    spec = ModelSpec.from_dict(doc["spec"])
    window = tuple(doc["training_window"]) if doc["training_window"] else None
    return FittedModel(spec, _decode(doc["params"]), tuple(doc["feature_names"]), window,
                       doc["target_stats"]["mean"], doc["target_stats"]["variance"],
                       _decode(doc["feature_stats"]["mean"]), _decode(doc["feature_stats"]["sd"]),
                       doc["train_loss"])


def dump_model(model: FittedModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> FittedModel:
    return loads_model(Path(path).read_text())
