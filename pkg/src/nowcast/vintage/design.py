"""Feature recipes and leakage-guarded design matrices."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np
import yaml

from ..errors import MissingTargetError, UnknownSeriesError, ValidationError
from .periods import (
    QUARTERLY,
    months_of_quarter,
    parse_date,
    period_from_ordinal,
    period_ordinal,
    quarter_of,
    shift_period,
)
from .store import ObservationLog, Snapshot
from .transforms import AGGREGATION_RULES, _apply_rule, normalize_chain

BLOCKS = (
    "domestic_demand",
    "external_demand",
    "labor_market",
    "prices",
    "financial_conditions",
    "other",
)
RAGGED_POLICIES = ("carry_within_quarter", "drop")


@dataclass(frozen=True)
class FeatureSpec:
    """One predictor column.

    ``lag`` aligns target quarter t with the feature's quarter t - lag.
    ``vintage="latest"`` and ``standardize_scope="full_sample"`` read the
    newest vintage instead of the snapshot. Both break real-time discipline
    and exist so the leakage audit can be exercised on planted faults.
    """

    name: str
    series: str
    chain: tuple[str, ...] = ()
    aggregation: str = "mean"
    block: str = "other"
    lag: int = 0
    vintage: str = "snapshot"
    standardize_scope: str = "window"

    def __post_init__(self):
        object.__setattr__(self, "chain", normalize_chain(self.chain))
        if self.aggregation not in AGGREGATION_RULES:
            raise ValidationError(f"feature {self.name}: unknown aggregation {self.aggregation!r}")
        if self.block not in BLOCKS:
            raise ValidationError(f"feature {self.name}: block tag {self.block!r} not in {BLOCKS}")
        if self.lag < 0:
            raise ValidationError(f"feature {self.name}: lag must be >= 0")
        if self.vintage not in ("snapshot", "latest"):
            raise ValidationError(f"feature {self.name}: vintage must be snapshot|latest")
        if self.standardize_scope not in ("window", "full_sample"):
            raise ValidationError(f"feature {self.name}: standardize_scope must be window|full_sample")


@dataclass(frozen=True)
class TargetSpec:
    series: str
    chain: tuple[str, ...] = ()
    aggregation: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "chain", normalize_chain(self.chain))
        if "standardize" in self.chain:
            raise ValidationError("the target chain may not standardize")


@dataclass(frozen=True)
class Recipe:
    target: TargetSpec
    features: tuple[FeatureSpec, ...] = ()
    allow_partial_quarters: bool = False
    ragged_policy: str = "carry_within_quarter"

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate feature names in recipe")
        if self.ragged_policy not in RAGGED_POLICIES:
            raise ValidationError(f"ragged_policy must be one of {RAGGED_POLICIES}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "Recipe":
        t = d["target"]
        target = TargetSpec(**t) if isinstance(t, Mapping) else TargetSpec(series=str(t))
        feats = tuple(FeatureSpec(**f) for f in d.get("features", ()))
        return cls(
            target=target,
            features=feats,
            allow_partial_quarters=bool(d.get("allow_partial_quarters", False)),
            ragged_policy=d.get("ragged_policy", "carry_within_quarter"),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target"]["chain"] = list(self.target.chain)
        for f, spec in zip(d["features"], self.features):
            f["chain"] = list(spec.chain)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_recipe(path) -> Recipe:
    with open(path, encoding="utf-8") as fh:
        return Recipe.from_dict(yaml.safe_load(fh))


@dataclass(frozen=True)
class StandardizeProvenance:
    mean: float
    sd: float
    periods: tuple[str, ...]
    max_published: date | None


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    source: str
    chain: tuple[str, ...]
    aggregation: str
    block: str
    lag: int
    vintage: str
    carried: bool = False
    standardize: tuple[StandardizeProvenance, ...] = ()
    allowed_window: tuple[str, ...] = ()


@dataclass(frozen=True)
class DesignMatrix:
    """Feature/target alignment as seen at ``origin``.

    Training rows are the quarters whose target is published; ``x_new`` is
    the row for ``nowcast_period``, the first quarter without a published
    target. ``*_published`` arrays hold, per cell, the latest publication
    date (as a proleptic ordinal) among the observations the cell derives from.
    """

    origin: date
    target_periods: tuple[str, ...]
    y: np.ndarray
    X: np.ndarray
    feature_names: tuple[str, ...]
    feature_meta: tuple[FeatureMeta, ...]
    nowcast_period: str
    x_new: np.ndarray
    dropped: tuple[tuple[str, str], ...]
    y_published: np.ndarray
    X_published: np.ndarray
    x_new_published: np.ndarray
    target_history_periods: tuple[str, ...] = ()
    target_history: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_rows(self) -> int:
        return len(self.target_periods)

    def block_tags(self) -> dict[str, str]:
        return {m.name: m.block for m in self.feature_meta}

    def content_digest(self) -> str:
        """Digest of everything except the origin date."""
        h = hashlib.sha256()
        h.update(json.dumps([self.target_periods, self.feature_names, self.nowcast_period,
                             self.dropped, self.target_history_periods]).encode())
        for arr in (self.y, self.X, self.x_new, self.target_history,
                    self.y_published, self.X_published, self.x_new_published):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr([asdict(m) for m in self.feature_meta]).encode())
        return h.hexdigest()


def _freeze(a) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _quarterly_source(snap: Snapshot, sid: str, rule: str, allow_partial: bool,
                      carry_quarter: str | None):
    """Quarter -> (value, latest publication ordinal, carried flag)."""
    out: dict[str, tuple[float, int, bool]] = {}
    rows = snap.series_with_provenance(sid)
    if snap.frequencies[sid] == QUARTERLY:
        for p, v, pub in rows:
            out[p] = (v, pub.toordinal(), False)
        return out
    by_q: dict[str, list[tuple[str, float, date]]] = {}
    for p, v, pub in rows:
        by_q.setdefault(quarter_of(p), []).append((p, v, pub))
    for q, months in by_q.items():
        have = {m: (v, pub) for m, v, pub in months}
        present = [m for m in months_of_quarter(q) if m in have]
        pub = max(have[m][1] for m in present).toordinal()
        if len(present) == 3 or allow_partial:
            out[q] = (_apply_rule([have[m][0] for m in present], rule), pub, False)
        elif q == carry_quarter:
            last = present[-1]
            out[q] = (have[last][0], have[last][1].toordinal(), True)
    return out


def _run_chain(values, pubs, ops, mask, grid_periods, override=None):
    x = values.copy()
    pub = pubs.copy()
    stats: list[StandardizeProvenance] = []
    k = 0
    for op in ops:
        if op == "log":
            fin = np.isfinite(x)
            if np.any(x[fin] <= 0):
                raise ValidationError("log of non-positive value")
            x = np.log(x)
        elif op in ("diff", "pct_change"):
            nx = np.full_like(x, np.nan)
            npub = np.zeros_like(pub)
            if op == "diff":
                nx[1:] = x[1:] - x[:-1]
            else:
                prev = x[:-1]
                if np.any(prev[np.isfinite(prev)] == 0):
                    raise ValidationError("pct_change with zero base value")
                nx[1:] = 100.0 * (x[1:] / prev - 1.0)
            npub[1:] = np.maximum(pub[1:], pub[:-1])
            x, pub = nx, npub
        else:
            if override is not None:
                st = override[k]
            else:
                m = mask & np.isfinite(x)
                if not m.any():
                    raise ValidationError("standardize: empty training window")
                w = x[m]
                mu, sd = float(w.mean()), float(w.std(ddof=0))
                if not sd > 0:
                    raise ValidationError("standardize: zero variance in training window")
                idx = np.flatnonzero(m)
                st = StandardizeProvenance(
                    mu, sd, tuple(grid_periods[i] for i in idx),
                    date.fromordinal(int(pub[idx].max())),
                )
            x = (x - st.mean) / st.sd
            stats.append(st)
            k += 1
    return x, pub, stats


def _dense(source: dict, grid: Sequence[str]):
    vals = np.full(len(grid), np.nan)
    pubs = np.zeros(len(grid), dtype=np.int64)
    pos = {p: i for i, p in enumerate(grid)}
    for p, (v, pub, _) in source.items():
        i = pos.get(p)
        if i is not None:
            vals[i] = v
            pubs[i] = pub
    return vals, pubs


def _grid_for(sources) -> list[str]:
    ords = [period_ordinal(p) for s in sources for p in s]
    if not ords:
        return []
    return [period_from_ordinal(QUARTERLY, o) for o in range(min(ords), max(ords) + 1)]


def assemble_design(snapshot: Snapshot, recipe: Recipe, origin=None,
                    log: ObservationLog | None = None, max_rows: int | None = None) -> DesignMatrix:
    """Align the recipe's features with the target as of ``snapshot.as_of``.

    ``max_rows`` keeps only the most recent target quarters (rolling window);
    standardisation statistics are computed on the retained window only.
    Features whose nowcast-quarter value is missing after the ragged-edge
    policy are dropped for this origin and listed in ``dropped``.
    """
    origin = snapshot.as_of if origin is None else parse_date(origin)
    if origin != snapshot.as_of:
        raise ValidationError(f"origin {origin} differs from snapshot date {snapshot.as_of}")

    needed = [recipe.target.series] + [f.series for f in recipe.features]
    dropped: list[tuple[str, str]] = []
    for sid in needed:
        if sid not in snapshot:
            known = log is not None and sid in log.series_ids
            if sid == recipe.target.series or not known:
                raise UnknownSeriesError(f"series {sid!r} is not available at {origin}")
    latest = None
    if any(f.vintage == "latest" or f.standardize_scope == "full_sample" for f in recipe.features):
        if log is None:
            raise ValidationError("latest-vintage features require the observation log")
        latest = log.snapshot_at(log.latest_published)

    t = recipe.target
    tsrc = _quarterly_source(snapshot, t.series, t.aggregation, recipe.allow_partial_quarters, None)
    if not tsrc:
        raise MissingTargetError(f"target {t.series!r} has no complete quarters at {origin}")
    tgrid = _grid_for([tsrc])
    tvals, tpubs = _dense(tsrc, tgrid)
    tvals, tpubs, _ = _run_chain(tvals, tpubs, t.chain, None, tgrid)
    if not np.isfinite(tvals).any():
        raise MissingTargetError(f"target {t.series!r} is all-missing after its transformation chain")
    last_t = tgrid[int(np.flatnonzero(np.isfinite(tvals)).max())]
    nowcast_period = shift_period(last_t, 1)

    fsrc = {}
    for f in recipe.features:
        snap = latest if f.vintage == "latest" else snapshot
        if f.series not in snap:
            dropped.append((f.name, "not_yet_published"))
            continue
        carry = shift_period(nowcast_period, -f.lag) if recipe.ragged_policy == "carry_within_quarter" else None
        fsrc[f.name] = _quarterly_source(snap, f.series, f.aggregation, recipe.allow_partial_quarters, carry)

    grid = _grid_for([tsrc] + list(fsrc.values()) + [[nowcast_period]])
    base = period_ordinal(grid[0])
    ypos = {p: period_ordinal(p) - base for p in tgrid}
    y_full = np.full(len(grid), np.nan)
    y_pub = np.zeros(len(grid), dtype=np.int64)
    for p, v, pb in zip(tgrid, tvals, tpubs):
        y_full[ypos[p]] = v
        y_pub[ypos[p]] = pb
    window = np.flatnonzero(np.isfinite(y_full))
    if max_rows is not None:
        if max_rows < 1:
            raise ValidationError("max_rows must be >= 1")
        window = window[-max_rows:]
    nc = period_ordinal(nowcast_period) - base

    cols, pubs_cols, metas, names, new_vals, new_pubs = [], [], [], [], [], []
    for f in recipe.features:
        if f.name not in fsrc:
            continue
        vals, pubs = _dense(fsrc[f.name], grid)
        mask = np.zeros(len(grid), bool)
        src_idx = window - f.lag
        mask[src_idx[src_idx >= 0]] = True
        allowed = tuple(grid[i] for i in np.flatnonzero(mask))
        override = None
        if "standardize" in f.chain and f.standardize_scope == "full_sample":
            lsrc = _quarterly_source(latest, f.series, f.aggregation, recipe.allow_partial_quarters, None)
            lgrid = _grid_for([lsrc])
            lv, lp = _dense(lsrc, lgrid)
            _, _, override = _run_chain(lv, lp, f.chain, np.ones(len(lgrid), bool), lgrid)
        vals, pubs, stats = _run_chain(vals, pubs, f.chain, mask, grid, override)
        shifted = np.full(len(grid), np.nan)
        spub = np.zeros(len(grid), dtype=np.int64)
        if f.lag:
            shifted[f.lag:] = vals[:-f.lag]
            spub[f.lag:] = pubs[:-f.lag]
        else:
            shifted, spub = vals, pubs
        if not np.isfinite(shifted[nc]):
            dropped.append((f.name, "ragged_edge_gap"))
            continue
        src_q = shift_period(nowcast_period, -f.lag)
        carried = fsrc[f.name].get(src_q, (0, 0, False))[2]
        cols.append(shifted)
        pubs_cols.append(spub)
        names.append(f.name)
        new_vals.append(shifted[nc])
        new_pubs.append(spub[nc])
        metas.append(FeatureMeta(f.name, f.series, f.chain, f.aggregation, f.block, f.lag,
                                 f.vintage, bool(carried), tuple(stats), allowed))

    X_full = np.column_stack(cols) if cols else np.empty((len(grid), 0))
    P_full = np.column_stack(pubs_cols) if pubs_cols else np.empty((len(grid), 0), dtype=np.int64)
    rows = [i for i in window if np.all(np.isfinite(X_full[i]))]
    if not rows:
        raise MissingTargetError(f"no complete training rows at {origin}")
    rows = np.asarray(rows)

    hist_idx = np.flatnonzero(np.isfinite(y_full))
    # keep the contiguous run ending at the last published target quarter
    contiguous = hist_idx
    gaps = np.flatnonzero(np.diff(hist_idx) != 1)
    if gaps.size:
        contiguous = hist_idx[gaps[-1] + 1:]
    if max_rows is not None:
        contiguous = contiguous[-max_rows:]

    return DesignMatrix(
        origin=origin,
        target_periods=tuple(grid[i] for i in rows),
        y=_freeze(y_full[rows]),
        X=_freeze(X_full[rows]),
        feature_names=tuple(names),
        feature_meta=tuple(metas),
        nowcast_period=nowcast_period,
        x_new=_freeze(np.asarray(new_vals, dtype=float)),
        dropped=tuple(dropped),
        y_published=_freeze(y_pub[rows]),
        X_published=_freeze(P_full[rows]),
        x_new_published=_freeze(np.asarray(new_pubs, dtype=np.int64)),
        target_history_periods=tuple(grid[i] for i in contiguous),
        target_history=_freeze(y_full[contiguous]),
    )


def target_value(snapshot: Snapshot, recipe: Recipe, period: str) -> float | None:
    """Transformed target for ``period`` in ``snapshot`` (None if unavailable)."""
    t = recipe.target
    if t.series not in snapshot:
        return None
    tsrc = _quarterly_source(snapshot, t.series, t.aggregation, recipe.allow_partial_quarters, None)
    if period not in tsrc:
        return None
    tgrid = _grid_for([tsrc])
    vals, pubs = _dense(tsrc, tgrid)
    vals, _, _ = _run_chain(vals, pubs, t.chain, None, tgrid)
    v = vals[tgrid.index(period)]
    return float(v) if np.isfinite(v) else None
