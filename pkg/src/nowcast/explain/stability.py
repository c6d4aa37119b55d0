"""Importance profiles across origins or bootstrap replicates, and stability diagnostics."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .._rng import keyed_rng
from ..bootstrap import MAX_FAILURE_SHARE, QUANTILE_METHOD, BlockBootstrapConfig, resample_indices
from ..errors import BootstrapError, NowcastError, ValidationError
from ..models import fit_model, fitted_values
from ..models.spec import ModelData, ModelSpec
from .attribution import AttributionVector, coefficient_importance, linear_contributions, vip_scores
from .gradients import integrated_gradients
from .permutation import block_permutation_importance
from .treeshap import tree_shap

log = logging.getLogger(__name__)

RANK_SHIFT_THRESHOLD = 3
TOP_K = 10


def _check_aligned(vectors: Sequence[AttributionVector]) -> tuple[str, ...]:
    if not vectors:
        raise ValidationError("no attribution vectors given")
    names = vectors[0].features
    for v in vectors[1:]:
        if v.features != names:
            raise ValidationError(f"feature sets differ across vectors: {names} vs {v.features}")
    return names


def magnitudes(v: AttributionVector) -> np.ndarray:
    """|value| for signed methods; nonnegative methods are floored at zero."""
    return np.abs(v.values) if v.signed else np.maximum(v.values, 0.0)


@dataclass(frozen=True)
class ImportanceProfile:
    """Robust summary of a stack of attributions for one model and method.

    ``central`` is the median magnitude and the band holds the ``alpha/2``
    and ``1 - alpha/2`` quantiles of the same magnitudes, so it always
    brackets ``central``. ``signed_band`` is the same pair on raw values.
    """

    model_id: str
    method: str
    features: tuple[str, ...]
    window: tuple[Any, Any]
    central: np.ndarray
    mean_magnitude: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    signed_lower: np.ndarray
    signed_upper: np.ndarray
    sign_share: np.ndarray
    alpha: float
    n: int
    point: AttributionVector | None = None
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def excludes_zero(self) -> np.ndarray:
        return (self.signed_lower > 0) | (self.signed_upper < 0)

    def rows(self):
        for j, name in enumerate(self.features):
            yield {"feature": name, "central": self.central[j], "mean_magnitude": self.mean_magnitude[j],
                   "lower": self.lower[j], "upper": self.upper[j], "signed_lower": self.signed_lower[j],
                   "signed_upper": self.signed_upper[j], "sign_share": self.sign_share[j]}


def importance_profile(vectors: Sequence[AttributionVector], alpha: float = 0.10, point=None,
                       metadata=None) -> ImportanceProfile:
    names = _check_aligned(vectors)
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    V = np.stack([v.values for v in vectors])
    M = np.stack([magnitudes(v) for v in vectors])
    q = (alpha / 2, 1 - alpha / 2)
    lo, hi = np.quantile(M, q, axis=0, method=QUANTILE_METHOD)
    slo, shi = np.quantile(V, q, axis=0, method=QUANTILE_METHOD)
    origins = [v.origin for v in vectors if v.origin is not None]
    window = (min(origins), max(origins)) if origins else (None, None)
    return ImportanceProfile(vectors[0].model_id, vectors[0].method, names, window,
                             np.median(M, axis=0), M.mean(axis=0), lo, hi, slo, shi,
                             (V > 0).mean(axis=0), alpha, len(vectors), point, dict(metadata or {}))


def attribute(model, method: str, data: ModelData, x=None, eval_data=None, **options) -> AttributionVector:
    """Dispatch one attribution method on a fitted model."""
    x = data.x_new if x is None else x
    if method == "coefficients":
        return coefficient_importance(model)
    if method == "linear_contributions":
        return linear_contributions(model, x)
    if method == "vip":
        return vip_scores(model)
    if method == "tree_shap":
        return tree_shap(model, x)
    if method == "integrated_gradients":
        return integrated_gradients(model, x, options.get("baseline", "window_median"),
                                    options.get("steps", 64), window=data.X, preshock=options.get("preshock"))
    if method == "permutation":
        if eval_data is None:
            raise ValidationError("permutation importance needs held-out evaluation rows")
        Xe, ye = eval_data
        return block_permutation_importance(model, Xe, ye, options.get("block_length", 4),
                                            options.get("seed", 0), options.get("repetitions", 50),
                                            options.get("loss", "sqerr"))
    raise ValidationError(f"unknown attribution method {method!r}")


def importance_bands(spec: ModelSpec, data: ModelData, method: str, config: BlockBootstrapConfig,
                     alpha: float = 0.10, x=None, eval_data=None, **options) -> ImportanceProfile:
    """Refit on each bootstrap replicate and summarise the replicate attributions.

    Replicate b reuses the resampling stream (seed, "bootstrap", b), so the
    draws are the same ones that produce the forecast interval.
    """
    n = data.n
    base = fit_model(spec, data)
    point = attribute(base, method, data, x, eval_data, **options)
    fitted = resid = None
    if config.unit == "residuals":
        fitted = fitted_values(base, data.X)
        resid = np.asarray(data.y) - fitted
    vectors, failures = [], []
    for b in range(config.replicates):
        idx = resample_indices(config, n, keyed_rng(config.seed, "bootstrap", b))
        rep = data.take(idx) if resid is None else data.with_y(fitted + resid[idx])
        try:
            m = fit_model(spec, rep)
            vectors.append(attribute(m, method, rep, data.x_new if x is None else x, eval_data, **options))
        except NowcastError as exc:
            failures.append((b, f"{type(exc).__name__}: {exc}"))
    if len(failures) > MAX_FAILURE_SHARE * config.replicates:
        raise BootstrapError(f"{len(failures)} of {config.replicates} replicates failed; first: {failures[0][1]}")
    for b, why in failures:
        log.warning("importance replicate %d excluded: %s", b, why)
    meta = {"bootstrap": config.to_dict(), "failed_replicates": len(failures), "options": dict(options)}
    return importance_profile(vectors, alpha, point, meta)


@dataclass(frozen=True)
class StabilityReport:
    origins: tuple[Any, ...]
    features: tuple[str, ...]
    rank_correlations: np.ndarray
    iqr: np.ndarray
    flags: tuple[dict, ...]
    sign_table: tuple[dict, ...]
    threshold: int
    top: int

    @property
    def mean_rank_correlation(self) -> float:
        return float(np.mean(self.rank_correlations))

    @property
    def flagged_features(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(f["feature"] for f in self.flags))

    @property
    def inconsistent_features(self) -> tuple[str, ...]:
        return tuple(r["feature"] for r in self.sign_table if r["listed"])


def rank_correlation(a, b) -> float:
    """Spearman correlation of magnitudes. Identical vectors give 1, a constant one 0."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if np.array_equal(a, b):
        return 1.0
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    return float(np.clip(spearmanr(a, b).statistic, -1.0, 1.0))


def stability_report(vectors: Sequence[AttributionVector], priors: Mapping[str, int] | None = None,
                     threshold: int = RANK_SHIFT_THRESHOLD, top: int = TOP_K) -> StabilityReport:
    """Temporal coherence and economic consistency of per-origin attributions.

    A feature is flagged when it sits in the top ``top`` at either of two
    consecutive origins and its rank moves by more than ``threshold``
    positions while the data did not change. Data is taken as changed only
    when both vectors carry a ``data_digest`` in their metadata and the two
    differ.
    """
    names = _check_aligned(vectors)
    if len(vectors) < 2:
        raise ValidationError("stability needs at least two origins")
    V = np.stack([v.values for v in vectors])
    corr = np.array([rank_correlation(magnitudes(a), magnitudes(b)) for a, b in zip(vectors, vectors[1:])])
    q75, q25 = np.percentile(V, [75, 25], axis=0)
    flags = []
    for a, b in zip(vectors, vectors[1:]):
        da, db = a.metadata.get("data_digest"), b.metadata.get("data_digest")
        if da is not None and db is not None and da != db:
            continue
        ra, rb = a.ranks(), b.ranks()
        for j, name in enumerate(names):
            if min(ra[j], rb[j]) <= top and abs(int(ra[j]) - int(rb[j])) > threshold:
                flags.append({"feature": name, "from_origin": a.origin, "to_origin": b.origin,
                              "rank_before": int(ra[j]), "rank_after": int(rb[j])})
    table = []
    for name, sign in sorted((priors or {}).items()):
        if name not in names:
            raise ValidationError(f"prior given for unknown feature {name!r}")
        if sign not in (-1, 1):
            raise ValidationError(f"prior sign for {name!r} must be +1 or -1")
        col = V[:, names.index(name)]
        share = float(np.mean(np.sign(col) == -sign))
        table.append({"feature": name, "prior": sign, "contradiction_share": share,
                      "median_value": float(np.median(col)), "listed": share > 0.5})
    return StabilityReport(tuple(v.origin for v in vectors), names, corr, q75 - q25, tuple(flags),
                           tuple(table), threshold, top)


def write_profile_csv(path, profile: ImportanceProfile, config_hash: str = "") -> None:
    cols = ["feature", "central", "mean_magnitude", "lower", "upper", "signed_lower", "signed_upper", "sign_share"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "method"] + cols + ["config_hash"])
        for row in profile.rows():
            w.writerow([profile.model_id, profile.method] + [row[c] if c == "feature" else repr(float(row[c]))
                                                             for c in cols] + [config_hash])


def write_stability_csv(path, report: StabilityReport, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "key", "value", "detail", "config_hash"])
        for (a, b), r in zip(zip(report.origins, report.origins[1:]), report.rank_correlations):
            w.writerow(["rank_correlation", f"{a}->{b}", repr(float(r)), "", config_hash])
        for name, v in zip(report.features, report.iqr):
            w.writerow(["iqr", name, repr(float(v)), "", config_hash])
        for f in report.flags:
            w.writerow(["instability", f["feature"], f["rank_after"] - f["rank_before"],
                        f"{f['from_origin']}->{f['to_origin']}", config_hash])
        for r in report.sign_table:
            w.writerow(["sign_coherence", r["feature"], repr(r["contradiction_share"]),
                        "listed" if r["listed"] else "", config_hash])
