"""Model Confidence Set on out-of-sample losses and forecast combination weights."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from ._rng import keyed_rng
from .bootstrap import BlockBootstrapConfig, resample_indices
from .errors import ValidationError
from .walk_forward import LossTable

log = logging.getLogger(__name__)

STATISTIC = "T_R"
MIN_ORIGINS = 10
SCHEMES = ("equal", "inverse_cumulative", "exponential")
MCS_WINDOWS = ("full",)


@dataclass(frozen=True)
class ModelConfidenceSet:
    """Survivors of sequential elimination plus the eliminated models in order.

    ``pvalues`` holds the monotonized MCS p-value of every model; survivors
    share the p-value of the final, non-rejected test.
    """

    survivors: tuple[str, ...]
    elimination_order: tuple[tuple[str, float], ...]
    pvalues: Mapping[str, float]
    level: float
    bootstrap: BlockBootstrapConfig
    block_length: int
    n_origins: int
    statistic: str = STATISTIC
    loss: str = "sqerr"

    def to_rows(self):
        for m, p in self.elimination_order:
            yield m, "eliminated", p
        for m in self.survivors:
            yield m, "survivor", self.pvalues[m]


def _range_statistic(means, boot_means):
    """T_R and its bootstrap null for the models in the current set.

    ``means`` has one entry per model and ``boot_means`` is ``(B, m)``.
    Pairs with zero bootstrap variance get t = 0 when their mean
    differential is zero and an infinite t otherwise.
    """
    d = means[:, None] - means[None, :]
    dstar = boot_means[:, :, None] - boot_means[:, None, :]
    centred = dstar - d[None]
    var = np.mean(centred ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(var > 0, d / np.sqrt(var), np.where(d == 0, 0.0, np.sign(d) * np.inf))
        tstar = np.where(var[None] > 0, np.abs(centred) / np.sqrt(var)[None], 0.0)
    return t, np.abs(t).max(), tstar.reshape(len(boot_means), -1).max(axis=1)


def mcs_losses(losses, model_ids: Sequence[str], alpha: float = 0.10,
               config: BlockBootstrapConfig | None = None, loss: str = "sqerr") -> ModelConfidenceSet:
    """Sequential elimination on a ``(origins, models)`` loss matrix.

    The bootstrap resamples whole loss rows in moving blocks, with block
    length ``ceil(T ** (1/3))`` unless the config fixes one, and the same
    resampled rows are reused at every elimination step. While the range
    test rejects at ``alpha`` the model with the largest t against some
    other model is removed.
    """
    L = np.asarray(losses, float)
    ids = tuple(model_ids)
    if L.ndim != 2 or L.shape[1] != len(ids):
        raise ValidationError("losses must be (origins, models) with one column per model id")
    if not ids:
        raise ValidationError("the Model Confidence Set needs at least one model")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    if not np.isfinite(L).all():
        raise ValidationError("losses must be finite on the common origins")
    config = config or BlockBootstrapConfig(replicates=999)
    T = len(L)
    block = config.length_for(T) if T else 1
    if len(ids) == 1:
        return ModelConfidenceSet(ids, (), {ids[0]: 1.0}, alpha, config, block, T, loss=loss)
    if T < MIN_ORIGINS:
        raise ValidationError(f"the Model Confidence Set needs at least {MIN_ORIGINS} common origins, got {T}")
    rows = np.stack([resample_indices(config, T, keyed_rng(config.seed, "mcs", b))
                     for b in range(config.replicates)])
    boot = L[rows].mean(axis=1)  # (B, m)
    means = L.mean(axis=0)
    alive = list(range(len(ids)))
    order, pvalues, running = [], {}, 0.0
    while len(alive) > 1:
        t, stat, null = _range_statistic(means[alive], boot[:, alive])
        p = float(np.mean(null >= stat))
        running = max(running, p)
        if p >= alpha:
            break
        worst = alive[int(np.argmax(t.max(axis=1)))]
        order.append((ids[worst], running))
        pvalues[ids[worst]] = running
        alive.remove(worst)
    final = 1.0 if len(alive) == 1 else running
    for i in alive:
        pvalues[ids[i]] = final
    return ModelConfidenceSet(tuple(ids[i] for i in alive), tuple(order), pvalues, alpha, config, block, T,
                              loss=loss)


def mcs(table: LossTable, alpha: float = 0.10, config: BlockBootstrapConfig | None = None,
        loss: str = "sqerr", model_ids: Sequence[str] | None = None, window: str = "full") -> ModelConfidenceSet:
    """Model Confidence Set over the origins where every model has a loss."""
    if window not in MCS_WINDOWS:
        raise ValidationError(f"MCS window {window!r} is not supported; only the full evaluation sample is "
                              "implemented, rolling-window confidence sets are not")
    ids = tuple(model_ids or table.model_ids)
    if not ids:
        raise ValidationError("the Model Confidence Set needs at least one model")
    rows = [table.model_ids.index(m) for m in ids]
    cols = table.common_columns(ids)
    return mcs_losses(table.losses(loss)[rows][:, cols].T, ids, alpha, config, loss)


@dataclass(frozen=True)
class CombinationWeights:
    scheme: str
    model_ids: tuple[str, ...]
    weights: np.ndarray
    as_of: date | None = None
    eta: float | None = None
    note: str = ""

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.model_ids, map(float, self.weights)))


def weights_from_cumulative(cumulative, scheme: str, eta: float = 1.0) -> tuple[np.ndarray, str]:
    S = np.asarray(cumulative, float)
    m = len(S)
    if scheme not in SCHEMES:
        raise ValidationError(f"unknown combination scheme {scheme!r}")
    if m == 0:
        raise ValidationError("no models to weight")
    if not np.isfinite(S).all():
        raise ValidationError("cumulative losses must be finite")
    equal = np.full(m, 1.0 / m)
    if scheme == "equal":
        return equal, ""
    if scheme == "inverse_cumulative":
        if (S <= 0).any():
            note = "a cumulative loss is zero; equal weights used"
            log.info(note)
            return equal, note
        w = 1.0 / S
    else:
        if eta < 0:
            raise ValidationError("eta must be >= 0")
        w = np.exp(-eta * (S - S.min()))
    return w / w.sum(), ""


def _cumulative(table: LossTable, ids, loss: str):
    rows = [table.model_ids.index(m) for m in ids]
    cols = table.common_columns(ids)
    return table.losses(loss)[rows][:, cols].sum(axis=1), len(cols)


def combination_weights(table: LossTable, scheme: str = "equal", eta: float = 1.0,
                        model_ids: Sequence[str] | None = None, loss: str = "sqerr",
                        as_of: date | None = None) -> CombinationWeights:
    """Weights from losses cumulated over the table's common origins."""
    ids = tuple(model_ids or table.model_ids)
    if not ids or not table.origins:
        raise ValidationError("cannot weight an empty loss table")
    S, _ = _cumulative(table, ids, loss)
    w, note = weights_from_cumulative(S, scheme, eta)
    return CombinationWeights(scheme, ids, w, as_of or table.origins[-1],
                              eta if scheme == "exponential" else None, note)


def combine_forecasts(forecasts: Mapping[str, float], weights: CombinationWeights) -> float:
    if set(forecasts) != set(weights.model_ids):
        raise ValidationError(f"forecasts {sorted(forecasts)} do not match weighted models "
                              f"{sorted(weights.model_ids)}")
    f = np.array([forecasts[m] for m in weights.model_ids], float)
    return float(weights.weights @ f)


@dataclass(frozen=True)
class WeightTrajectory:
    scheme: str
    origins: tuple[date, ...]
    weights: tuple[CombinationWeights, ...]
    turnover: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def total_turnover(self) -> float:
        return float(self.turnover.sum())

    def matrix(self) -> np.ndarray:
        return np.stack([w.weights for w in self.weights])


def weight_trajectory(table: LossTable, scheme: str = "equal", eta: float = 1.0,
                      model_ids: Sequence[str] | None = None, loss: str = "sqerr") -> WeightTrajectory:
    """Weights in force at each origin, built only from losses of earlier origins.

    An origin with no earlier scored origin gets equal weights. Turnover is
    the sum of absolute weight changes between consecutive origins.
    """
    ids = tuple(model_ids or table.model_ids)
    if len(table.origins) < 2:
        raise ValidationError("a weight trajectory needs at least two origins")
    out = []
    for j, o in enumerate(table.origins):
        past = LossTable(table.model_ids, table.origins[:j], table.target_periods[:j], table.forecasts[:, :j],
                         table.actuals[:j], table.sqerr[:, :j], table.abserr[:, :j])
        S, used = _cumulative(past, ids, loss) if j else (None, 0)
        if used == 0:
            w, note = np.full(len(ids), 1.0 / len(ids)), "no realized losses yet; equal weights"
        else:
            w, note = weights_from_cumulative(S, scheme, eta)
        out.append(CombinationWeights(scheme, ids, w, o, eta if scheme == "exponential" else None, note))
    W = np.stack([w.weights for w in out])
    return WeightTrajectory(scheme, table.origins, tuple(out), np.abs(np.diff(W, axis=0)).sum(axis=1))


def write_mcs_csv(path, result: ModelConfidenceSet, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "status", "mcs_pvalue", "statistic", "alpha", "block_length", "replicates",
                    "n_origins", "config_hash"])
        for m, status, p in result.to_rows():
            w.writerow([m, status, repr(float(p)), result.statistic, result.level, result.block_length,
                        result.bootstrap.replicates, result.n_origins, config_hash])


def write_weights_csv(path, trajectory: WeightTrajectory, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "scheme", "model_id", "weight", "turnover", "note", "config_hash"])
        turn = np.concatenate([[0.0], trajectory.turnover])
        for cw, t in zip(trajectory.weights, turn):
            for m, v in zip(cw.model_ids, cw.weights):
                w.writerow([cw.as_of.isoformat() if cw.as_of else "", cw.scheme, m, repr(float(v)),
                            repr(float(t)), cw.note, config_hash])

