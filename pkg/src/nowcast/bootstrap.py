"""Block bootstrap resampling, replicate refits and percentile prediction intervals."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from ._rng import keyed_rng
from .errors import BootstrapError, InsufficientReplicatesError, NowcastError, ValidationError
from .models import fit_model, fitted_values, predict
from .models.spec import ModelData, ModelSpec, prepare_data

log = logging.getLogger(__name__)

SCHEMES = ("moving_block", "stationary")
UNITS = ("observed_row_vectors", "residuals")
QUANTILE_METHOD = "linear"  # numpy's default, Hyndman-Fan type 7
MAX_FAILURE_SHARE = 0.10


def default_block_length(n: int) -> int:
    return max(1, math.ceil(n ** (1 / 3) - 1e-12))


@dataclass(frozen=True)
class BlockBootstrapConfig:
    """Resampling design.

    ``block_length`` is the fixed block size for the moving-block scheme and
    the expected block size ``1/p`` for the stationary scheme when ``p`` is
    not given. None means ``ceil(n ** (1/3))``. With ``predictive`` each
    replicate forecast also adds one draw from that replicate's in-sample
    residuals, so intervals cover the outcome and not only the conditional
    mean.
    """

    scheme: str = "moving_block"
    block_length: int | None = None
    p: float | None = None
    replicates: int = 199
    seed: int = 0
    unit: str = "observed_row_vectors"
    predictive: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown bootstrap scheme {self.scheme!r}")
        if self.unit not in UNITS:
            raise ValidationError(f"unknown resampling unit {self.unit!r}")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.block_length is not None and self.block_length < 1:
            raise ValidationError("block_length must be >= 1")
        if self.p is not None and not 0 < self.p <= 1:
            raise ValidationError("p must lie in (0, 1]")

    def length_for(self, n: int) -> int:
        L = self.block_length if self.block_length is not None else default_block_length(n)
        if self.scheme == "moving_block" and L > n:
            raise ValidationError(f"block length {L} exceeds series length {n}")
        return L

    def p_for(self, n: int) -> float:
        return self.p if self.p is not None else 1.0 / self.length_for(n)

    def to_dict(self) -> dict:
        return asdict(self)


def moving_block_indices(n: int, L: int, rng) -> np.ndarray:
    """ceil(n/L) blocks of L consecutive indices, starts uniform on [0, n-L], cut to n."""
    if n < 1:
        raise ValidationError("cannot resample an empty series")
    if not 1 <= L <= n:
        raise ValidationError(f"block length must lie in [1, {n}], got {L}")
    k = -(-n // L)
    starts = np.asarray(rng.integers(0, n - L + 1, size=k))
    return (starts[:, None] + np.arange(L)[None, :]).ravel()[:n]


def stationary_indices(n: int, p: float, rng) -> np.ndarray:
    """Geometric block lengths: restart at a uniform index with probability p, else wrap forward."""
    if n < 1:
        raise ValidationError("cannot resample an empty series")
    if not 0 < p <= 1:
        raise ValidationError("p must lie in (0, 1]")
    restart = rng.random(n) < p
    fresh = rng.integers(0, n, size=n)
    idx = np.empty(n, dtype=np.int64)
    idx[0] = fresh[0]
    for t in range(1, n):
        idx[t] = fresh[t] if restart[t] else (idx[t - 1] + 1) % n
    return idx


def moving_block_resample(rows, L: int, rng):
    rows = np.asarray(rows)
    return rows[moving_block_indices(len(rows), L, rng)]


def stationary_resample(rows, p: float, rng):
    rows = np.asarray(rows)
    return rows[stationary_indices(len(rows), p, rng)]


def resample_indices(config: BlockBootstrapConfig, n: int, rng) -> np.ndarray:
    if config.scheme == "moving_block":
        return moving_block_indices(n, config.length_for(n), rng)
    return stationary_indices(n, config.p_for(n), rng)


@dataclass(frozen=True)
class BootstrapResult:
    replicates: np.ndarray
    point: float
    failures: tuple[tuple[int, str], ...]
    config: BlockBootstrapConfig
    block_length: int

    def echo(self) -> dict:
        d = self.config.to_dict()
        d["resolved_block_length"] = self.block_length
        d["failed_replicates"] = len(self.failures)
        return d


def _residuals(model, data: ModelData) -> np.ndarray:
    return np.asarray(data.y) - fitted_values(model, data.X)


def bootstrap_model_data(spec: ModelSpec, data: ModelData, config: BlockBootstrapConfig,
                         base_model=None) -> BootstrapResult:
    """Refit ``spec`` on B resampled trajectories and forecast ``data.x_new`` each time.

    Replicate b draws from its own stream keyed by (seed, "bootstrap", b),
    so the result does not depend on execution order.
    """
    n = data.n
    L = config.length_for(n)
    base = base_model if base_model is not None else fit_model(spec, data)
    point = predict(base, data.x_new)
    fitted = fitted_values(base, data.X) if config.unit == "residuals" else None
    resid0 = np.asarray(data.y) - fitted if fitted is not None else None
    out = np.full(config.replicates, np.nan)
    failures = []
    for b in range(config.replicates):
        rng = keyed_rng(config.seed, "bootstrap", b)
        idx = resample_indices(config, n, rng)
        if config.unit == "observed_row_vectors":
            rep = data.take(idx)
        else:
            rep = data.with_y(fitted + resid0[idx])
        try:
            m = fit_model(spec, rep)
            f = predict(m, data.x_new)
            if config.predictive:
                r = _residuals(m, rep)
                f += float(r[rng.integers(0, len(r))])
        except NowcastError as exc:
            failures.append((b, f"{type(exc).__name__}: {exc}"))
            continue
        out[b] = f
    if len(failures) > MAX_FAILURE_SHARE * config.replicates:
        raise BootstrapError(f"{len(failures)} of {config.replicates} bootstrap replicates failed; "
                             f"first: {failures[0][1]}")
    for b, why in failures:
        log.warning("bootstrap replicate %d excluded: %s", b, why)
    return BootstrapResult(out[np.isfinite(out)], point, tuple(failures), config, L)


def bootstrap_forecast(recipe, spec: ModelSpec, snapshot, config: BlockBootstrapConfig,
                       log_=None, max_rows=None) -> BootstrapResult:
    """Full pipeline: assemble the design as of the snapshot, then bootstrap the fit."""
    from .vintage import assemble_design

    design = assemble_design(snapshot, recipe, log=log_, max_rows=max_rows)
    return bootstrap_model_data(spec, prepare_data(spec, design), config)


@dataclass(frozen=True)
class PredictionInterval:
    origin: date | None
    alpha: float
    lower: float
    upper: float
    point: float
    quantiles: Mapping[float, float] = field(default_factory=dict)
    n_replicates: int = 0
    quantile_method: str = QUANTILE_METHOD

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {"origin": self.origin.isoformat() if self.origin else None, "alpha": self.alpha,
                "lower": self.lower, "upper": self.upper, "point": self.point,
                "quantiles": {repr(k): v for k, v in self.quantiles.items()},
                "n_replicates": self.n_replicates, "quantile_method": self.quantile_method}


SUMMARY_GRID = (0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95)


def percentile_interval(replicates, alpha: float, point: float | None = None,
                        origin: date | None = None) -> PredictionInterval:
    """Empirical alpha/2 and 1-alpha/2 quantiles with linear interpolation."""
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    r = np.sort(np.asarray(replicates, float))
    if r.size == 0:
        raise InsufficientReplicatesError("no replicates")
    if alpha <= 0.10 and r.size < 20:
        raise InsufficientReplicatesError(f"alpha={alpha} needs at least 20 replicates, got {r.size}")
    lo, hi = np.quantile(r, [alpha / 2, 1 - alpha / 2], method=QUANTILE_METHOD)
    qs = np.quantile(r, SUMMARY_GRID, method=QUANTILE_METHOD)
    pt = float(np.median(r)) if point is None else float(point)
    return PredictionInterval(origin, alpha, float(lo), float(hi), pt,
                              dict(zip(SUMMARY_GRID, map(float, qs))), int(r.size))


@dataclass(frozen=True)
class CoverageReport:
    window: tuple[date, date] | None
    nominal: float
    empirical: float
    mean_width: float
    width_series: tuple[float, ...]
    asymmetry: tuple[float, ...]
    hits: tuple[bool, ...]
    origins: tuple[date, ...]


def _asymmetry(iv: PredictionInterval) -> float:
    up = iv.upper - iv.point
    return (iv.point - iv.lower) / up if up > 0 else float("nan")


def coverage_report(intervals: Sequence[PredictionInterval], actuals: Mapping) -> CoverageReport:
    """Hit rate and widths over the intervals whose actual is known.

    ``actuals`` maps each interval's origin to the realised value (missing or
    None means unresolved and is skipped).
    """
    resolved = [iv for iv in intervals if actuals.get(iv.origin) is not None]
    if not resolved:
        raise ValidationError("coverage needs at least one resolved origin")
    nominal = {round(1 - iv.alpha, 12) for iv in resolved}
    if len(nominal) != 1:
        raise ValidationError("intervals mix different nominal levels")
    hits = tuple(bool(iv.contains(float(actuals[iv.origin]))) for iv in resolved)
    widths = tuple(iv.width for iv in resolved)
    origins = tuple(iv.origin for iv in resolved)
    window = (min(origins), max(origins)) if all(o is not None for o in origins) else None
    return CoverageReport(window, nominal.pop(), float(np.mean(hits)), float(np.mean(widths)), widths,
                          tuple(_asymmetry(iv) for iv in resolved), hits, origins)


@dataclass(frozen=True)
class SweepRow:
    block_length: int
    mean_width: float
    coverage: float | None
    flagged: bool


def block_length_sweep(spec: ModelSpec, cases: Sequence[tuple[ModelData, float | None]],
                       lengths: Sequence[int], config: BlockBootstrapConfig, alpha: float = 0.10,
                       threshold: float = 0.25) -> list[SweepRow]:
    """Mean width and coverage per block length over a set of forecast cases.

    Each case is (training data, realised actual or None). Lengths longer
    than the shortest sample are dropped. A row is flagged when its mean
    width differs from an adjacent length's by more than ``threshold``
    (relative to the smaller width).
    """
    if len(lengths) < 2:
        raise ValidationError("a sweep needs at least two block lengths")
    if not cases:
        raise ValidationError("a sweep needs at least one forecast case")
    n_min = min(d.n for d, _ in cases)
    admissible = sorted({int(L) for L in lengths if 1 <= L <= n_min})
    rows = []
    for L in admissible:
        cfg = BlockBootstrapConfig(config.scheme, L, None, config.replicates, config.seed, config.unit,
                                   config.predictive)
        widths, hits = [], []
        for data, actual in cases:
            res = bootstrap_model_data(spec, data, cfg)
            iv = percentile_interval(res.replicates, alpha, res.point)
            widths.append(iv.width)
            if actual is not None:
                hits.append(iv.contains(actual))
        rows.append([L, float(np.mean(widths)), float(np.mean(hits)) if hits else None, False])

    def disagree(a, b):
        lo, hi = min(a, b), max(a, b)
        if hi == 0:
            return False
        return lo == 0 or hi / lo - 1 > threshold

    for i in range(len(rows) - 1):
        if disagree(rows[i][1], rows[i + 1][1]):
            rows[i][3] = rows[i + 1][3] = True
    return [SweepRow(*r) for r in rows]


def write_replicates_csv(path, entries, config: BlockBootstrapConfig, config_hash: str = "") -> None:
    """``entries``: iterable of (origin, model_id, BootstrapResult)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["origin", "model_id", "replicate", "value", "scheme", "block_length", "seed", "config_hash"])
        for origin, model_id, res in entries:
            for b, v in enumerate(res.replicates):
                w.writerow([origin, model_id, b, repr(float(v)), config.scheme, res.block_length,
                            config.seed, config_hash])


def write_intervals_csv(path, rows, config_hash: str = "") -> None:
    """``rows``: iterable of (model_id, PredictionInterval)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["origin", "model_id", "alpha", "lower", "point", "upper", "n_replicates",
                    "quantile_method", "config_hash"])
        for model_id, iv in rows:
            w.writerow([iv.origin, model_id, iv.alpha, repr(iv.lower), repr(iv.point), repr(iv.upper),
                        iv.n_replicates, iv.quantile_method, config_hash])
