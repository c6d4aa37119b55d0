"""Frequency harmonisation and window-local transformation chains."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ValidationError
from .periods import months_of_quarter, period_ordinal, quarter_of

AGGREGATION_RULES = ("mean", "end_of_period", "sum")
TRANSFORM_OPS = ("log", "diff", "pct_change", "standardize")


def aggregate_to_quarterly(series, rule: str = "mean", allow_partial: bool = False) -> dict[str, float]:
    """Collapse monthly values to quarters.

    ``series`` is a mapping or iterable of ``(YYYY-MM, value)``. Quarters
    with fewer than three months are dropped unless ``allow_partial`` is set,
    in which case the rule is applied to the months available.
    """
    items = list(series.items()) if isinstance(series, Mapping) else list(series)
    if not items:
        raise ValidationError("aggregate_to_quarterly: empty input")
    if rule not in AGGREGATION_RULES:
        raise ValidationError(f"unknown aggregation rule {rule!r}")
    by_quarter: dict[str, dict[str, float]] = {}
    for period, value in items:
        by_quarter.setdefault(quarter_of(period), {})[period] = float(value)
    out: dict[str, float] = {}
    for q in sorted(by_quarter, key=period_ordinal):
        months = [m for m in months_of_quarter(q) if m in by_quarter[q]]
        if len(months) < 3 and not allow_partial:
            continue
        vals = [by_quarter[q][m] for m in months]
        out[q] = _apply_rule(vals, rule)
    return out


def _apply_rule(vals: Sequence[float], rule: str) -> float:
    if rule == "mean":
        return float(np.mean(vals))
    if rule == "end_of_period":
        return float(vals[-1])
    return float(np.sum(vals))


@dataclass(frozen=True)
class StandardizeStats:
    mean: float
    sd: float
    window: tuple[int, ...]  # positions in the aligned series


def normalize_chain(chain: Iterable) -> tuple[str, ...]:
    ops = []
    for step in chain or ():
        op = step.get("op") if isinstance(step, Mapping) else step
        if op not in TRANSFORM_OPS:
            raise ValidationError(f"unknown transformation {op!r}")
        ops.append(op)
    return tuple(ops)


def apply_chain_aligned(values: np.ndarray, chain: Sequence[str], window_mask=None):
    """Apply ``chain`` keeping the original length; undefined cells become NaN.

    ``window_mask`` marks the positions whose statistics feed any
    ``standardize`` step. Returns ``(values, [StandardizeStats, ...])``.
    """
    x = np.asarray(values, dtype=float).copy()
    stats: list[StandardizeStats] = []
    for op in normalize_chain(chain):
        if op == "log":
            finite = np.isfinite(x)
            if np.any(x[finite] <= 0):
                raise ValidationError("log of non-positive value")
            x = np.log(x)
        elif op == "diff":
            d = np.full_like(x, np.nan)
            d[1:] = x[1:] - x[:-1]
            x = d
        elif op == "pct_change":
            d = np.full_like(x, np.nan)
            prev = x[:-1]
            if np.any(prev[np.isfinite(prev)] == 0):
                raise ValidationError("pct_change with zero base value")
            d[1:] = 100.0 * (x[1:] / prev - 1.0)
            x = d
        else:
            mask = np.ones(len(x), bool) if window_mask is None else np.asarray(window_mask, bool)
            mask = mask & np.isfinite(x)
            if not mask.any():
                raise ValidationError("standardize: empty training window")
            w = x[mask]
            mu = float(w.mean())
            sd = float(w.std(ddof=0))
            if not sd > 0:
                raise ValidationError("standardize: zero variance in training window")
            x = (x - mu) / sd
            stats.append(StandardizeStats(mu, sd, tuple(int(i) for i in np.flatnonzero(mask))))
    return x, stats


def transform(values, chain, window=None) -> np.ndarray:
    """Apply a transformation chain to a series.

    Each ``diff``/``pct_change`` shortens the output by one. ``standardize``
    uses the population mean and standard deviation (ddof=0) of ``window``,
    a slice or boolean mask over the series as it enters that step; the
    default window is the whole series.
    """
    ops = normalize_chain(chain)
    x = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError("transform: non-finite input")
    lost = 0
    for op in ops:
        if op == "standardize":
            break
        lost += op in ("diff", "pct_change")
    mask = None
    if window is not None and "standardize" in ops:
        body = np.zeros(max(len(x) - lost, 0), bool)
        if isinstance(window, slice):
            body[window] = True
        else:
            body = np.asarray(window, bool)
            if body.shape != (max(len(x) - lost, 0),):
                raise ValidationError("window mask length does not match the series entering standardize")
        mask = np.concatenate([np.zeros(lost, bool), body])
    shrink = sum(op in ("diff", "pct_change") for op in ops)
    if len(x) <= shrink:
        return np.empty(0)
    out, _ = apply_chain_aligned(x, ops, mask)
    return out[shrink:]
