"""Walk-forward refits, loss tables, benchmark filtering and the leakage audit."""
from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptySnapshotError, NowcastError, ValidationError
from .models import fit_model, predict
from .models.spec import FittedModel, ModelData, ModelSpec, prepare_data
from .vintage import ObservationLog, Recipe, assemble_design, target_value
from .vintage.design import DesignMatrix
from .vintage.periods import months_of_quarter, parse_date

WINDOWS = ("expanding", "rolling")
LOSSES = ("sqerr", "abserr")
ACTUALS_VINTAGES = ("latest", "first")


@dataclass(frozen=True)
class EvaluationPlan:
    origins: tuple[date, ...]
    recipe: Recipe
    portfolio: tuple[ModelSpec, ...]
    window: str = "expanding"
    window_length: int | None = None
    benchmark_ids: tuple[str, ...] = ()
    loss_functions: tuple[str, ...] = LOSSES
    min_rows: int = 8

    def __post_init__(self):
        origins = tuple(parse_date(o) for o in self.origins)
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "portfolio", tuple(self.portfolio))
        object.__setattr__(self, "benchmark_ids", tuple(self.benchmark_ids))
        object.__setattr__(self, "loss_functions", tuple(self.loss_functions))
        if not origins:
            raise ValidationError("plan needs at least one origin")
        if any(b <= a for a, b in zip(origins, origins[1:])):
            raise ValidationError("origins must be strictly increasing")
        if self.window not in WINDOWS:
            raise ValidationError(f"unknown window {self.window!r}")
        if self.window == "rolling":
            if self.window_length is None or self.window_length < self.min_rows:
                raise ValidationError(f"rolling window length must be >= min_rows={self.min_rows}")
        ids = [s.model_id for s in self.portfolio]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate model ids in portfolio: {ids}")
        if not set(self.benchmark_ids) <= set(ids):
            raise ValidationError(f"benchmarks {sorted(set(self.benchmark_ids) - set(ids))} not in the portfolio")
        if not set(self.loss_functions) <= set(LOSSES) or not self.loss_functions:
            raise ValidationError(f"loss functions must be a non-empty subset of {LOSSES}")

    @property
    def max_rows(self) -> int | None:
        return self.window_length if self.window == "rolling" else None

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(s.model_id for s in self.portfolio)


@dataclass(frozen=True)
class ForecastRecord:
    origin: date
    model_id: str
    target_period: str | None
    point: float | None
    status: str  # "ok" or "skipped"
    reason: str = ""
    n_train: int = 0
    design_digest: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self) -> list[str]:
        return [self.origin.isoformat(), self.model_id, self.target_period or "",
                "" if self.point is None else repr(self.point), self.status, self.reason,
                str(self.n_train), self.design_digest]


RECORD_HEADER = ["origin", "model_id", "target_period", "point", "status", "reason", "n_train", "design_digest"]


@dataclass
class OriginRun:
    """Everything produced at one origin; models/data are kept for later layers."""

    origin: date
    records: list[ForecastRecord]
    design: DesignMatrix | None = None
    models: dict[str, FittedModel] = field(default_factory=dict)
    data: dict[str, ModelData] = field(default_factory=dict)


def run_origin(plan: EvaluationPlan, log: ObservationLog, origin: date, keep: bool = False) -> OriginRun:
    """snapshot -> design -> fit -> predict for every portfolio member at one origin."""
    try:
        snap = log.snapshot_at(origin)
        design = assemble_design(snap, plan.recipe, log=log, max_rows=plan.max_rows)
    except (EmptySnapshotError, NowcastError) as exc:
        reason = f"design: {type(exc).__name__}: {exc}"
        return OriginRun(origin, [ForecastRecord(origin, s.model_id, None, None, "skipped", reason)
                                  for s in plan.portfolio])
    digest = design.content_digest()
    run = OriginRun(origin, [], design if keep else None)
    for spec in plan.portfolio:
        try:
            data = prepare_data(spec, design)
            if data.n < plan.min_rows:
                raise ValidationError(f"{data.n} training rows < min_rows={plan.min_rows}")
            model = fit_model(spec, data)
            point = predict(model, data.x_new)
        except NowcastError as exc:
            run.records.append(ForecastRecord(origin, spec.model_id, design.nowcast_period, None, "skipped",
                                              f"{type(exc).__name__}: {exc}", 0, digest))
            continue
        run.records.append(ForecastRecord(origin, spec.model_id, design.nowcast_period, point, "ok", "",
                                          data.n, digest))
        if keep:
            run.models[spec.model_id] = model
            run.data[spec.model_id] = data
    return run


def _origin_task(args):
    plan, log, origin, keep = args
    return run_origin(plan, log, origin, keep)


def run_walk_forward(plan: EvaluationPlan, log: ObservationLog, n_jobs: int = 1,
                     keep: bool = False) -> list[OriginRun]:
    """Independent per-origin runs, returned in origin order whatever the schedule."""
    tasks = [(plan, log, o, keep) for o in plan.origins]
    if n_jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            runs = list(pool.map(_origin_task, tasks))
    else:
        runs = [_origin_task(t) for t in tasks]
    return sorted(runs, key=lambda r: r.origin)


def forecast_records(runs: Sequence[OriginRun]) -> list[ForecastRecord]:
    return [r for run in runs for r in run.records]


def _first_release_date(log: ObservationLog, series: str, period: str):
    parts = [period] if log.frequency_of(series) == "quarterly" else months_of_quarter(period)
    dates = []
    for p in parts:
        obs = log.first_release(series, p)
        if obs is None:
            return None
        dates.append(obs.published_at)
    return max(dates)


def actuals_for(log: ObservationLog, recipe: Recipe, periods, vintage: str = "latest",
                as_of=None) -> dict[str, float]:
    """Realised transformed target per period from the chosen vintage.

    ``latest`` reads the snapshot at ``as_of`` (default: the log's latest
    publication). ``first`` reads the snapshot at the date the period was
    first published, ignoring later revisions. Periods without a value are
    left out.
    """
    if vintage not in ACTUALS_VINTAGES:
        raise ValidationError(f"actuals vintage must be one of {ACTUALS_VINTAGES}")
    out = {}
    periods = sorted(set(p for p in periods if p))
    if vintage == "latest":
        when = parse_date(as_of) if as_of is not None else log.latest_published
        snap = log.snapshot_at(when)
        for p in periods:
            v = target_value(snap, recipe, p)
            if v is not None:
                out[p] = v
        return out
    limit = parse_date(as_of) if as_of is not None else None
    for p in periods:
        when = _first_release_date(log, recipe.target.series, p)
        if when is None or (limit is not None and when > limit):
            continue
        v = target_value(log.snapshot_at(when), recipe, p)
        if v is not None:
            out[p] = v
    return out


@dataclass(frozen=True)
class LossTable:
    model_ids: tuple[str, ...]
    origins: tuple[date, ...]
    target_periods: tuple[str, ...]
    forecasts: np.ndarray  # models x origins, NaN when skipped
    actuals: np.ndarray    # per origin, NaN when unresolved
    sqerr: np.ndarray
    abserr: np.ndarray

    def losses(self, kind: str = "sqerr") -> np.ndarray:
        if kind not in LOSSES:
            raise ValidationError(f"unknown loss {kind!r}")
        return self.sqerr if kind == "sqerr" else self.abserr

    def common_columns(self, model_ids=None) -> np.ndarray:
        rows = [self.model_ids.index(m) for m in (model_ids or self.model_ids)]
        return np.flatnonzero(np.isfinite(self.sqerr[rows]).all(axis=0))

    def summary(self, common: bool = False) -> dict[str, dict[str, float]]:
        cols = self.common_columns() if common else None
        out = {}
        for i, m in enumerate(self.model_ids):
            sq, ab = self.sqerr[i], self.abserr[i]
            if cols is not None:
                sq, ab = sq[cols], ab[cols]
            ok = np.isfinite(sq)
            n = int(ok.sum())
            out[m] = {"rmsfe": float(np.sqrt(sq[ok].mean())) if n else float("nan"),
                      "mafe": float(ab[ok].mean()) if n else float("nan"), "n": n}
        return out

    def restrict(self, upto: date) -> "LossTable":
        keep = [j for j, o in enumerate(self.origins) if o <= upto]
        return LossTable(self.model_ids, tuple(self.origins[j] for j in keep),
                         tuple(self.target_periods[j] for j in keep), self.forecasts[:, keep],
                         self.actuals[keep], self.sqerr[:, keep], self.abserr[:, keep])

    def to_rows(self):
        for i, m in enumerate(self.model_ids):
            for j, o in enumerate(self.origins):
                if np.isfinite(self.sqerr[i, j]):
                    yield m, o, self.target_periods[j], self.forecasts[i, j], self.actuals[j], \
                        self.sqerr[i, j], self.abserr[i, j]


def compute_losses(records: Sequence[ForecastRecord], actuals: Mapping[str, float],
                   model_ids: Sequence[str] | None = None) -> LossTable:
    """Squared and absolute errors for every (model, origin) whose actual is known."""
    if not records:
        raise ValidationError("no forecast records")
    ids = tuple(model_ids) if model_ids else tuple(dict.fromkeys(r.model_id for r in records))
    origins = tuple(sorted({r.origin for r in records}))
    col = {o: j for j, o in enumerate(origins)}
    targets = [None] * len(origins)
    F = np.full((len(ids), len(origins)), np.nan)
    for r in records:
        if r.model_id not in ids:
            continue
        j = col[r.origin]
        if r.target_period:
            targets[j] = r.target_period
        if r.ok:
            F[ids.index(r.model_id), j] = r.point
    A = np.array([actuals.get(t, np.nan) if t else np.nan for t in targets], float)
    if not np.isfinite(A).any():
        raise ValidationError("no origin has a published actual to score against")
    E = A[None, :] - F
    return LossTable(ids, origins, tuple(t or "" for t in targets), F, A, E * E, np.abs(E))


def rmsfe_mafe(errors) -> tuple[float, float]:
    e = np.asarray(errors, float)
    return float(np.sqrt(np.mean(e * e))), float(np.mean(np.abs(e)))


def benchmark_filter(table: LossTable, benchmark_ids: Sequence[str], margin: float = 0.05) -> dict[str, str]:
    """Flag a model when it is worse than the best benchmark on both RMSFE and MAFE.

    Both comparisons are strict and use ``(1 + margin)``; statistics are
    computed on origins where every model has a loss. Benchmarks are never
    flagged.
    """
    if margin < 0:
        raise ValidationError("margin must be >= 0")
    if not table.model_ids:
        raise ValidationError("empty loss table")
    bench = [b for b in benchmark_ids if b in table.model_ids]
    if not bench:
        raise ValidationError("loss table contains no benchmark model")
    stats = table.summary(common=True)
    best_r = min(stats[b]["rmsfe"] for b in bench)
    best_m = min(stats[b]["mafe"] for b in bench)
    out = {}
    for m in table.model_ids:
        dominated = stats[m]["rmsfe"] > (1 + margin) * best_r and stats[m]["mafe"] > (1 + margin) * best_m
        out[m] = "flagged" if dominated and m not in bench else "retained"
    return out


@dataclass(frozen=True)
class Violation:
    origin: date
    feature: str
    kind: str
    detail: str

    def as_dict(self) -> dict:
        return {"origin": self.origin.isoformat(), "feature": self.feature, "kind": self.kind,
                "detail": self.detail}


@dataclass(frozen=True)
class AuditVerdict:
    violations: tuple[Violation, ...]
    origins_checked: int
    cells_checked: int

    @property
    def clean(self) -> bool:
        return not self.violations

    def features(self) -> set[str]:
        return {v.feature for v in self.violations}

    def digest(self) -> str:
        payload = json.dumps([v.as_dict() for v in self.violations], sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def audit_design(design: DesignMatrix) -> tuple[list[Violation], int]:
    """Check every provenance stamp of one design against its origin."""
    origin = design.origin
    limit = origin.toordinal()
    out = []
    cells = design.y_published.size + design.X_published.size + design.x_new_published.size
    if (design.y_published > limit).any():
        out.append(Violation(origin, "target", "future_target",
                             "target value published after the origin"))
    for j, meta in enumerate(design.feature_meta):
        col = design.X_published[:, j] if design.X_published.size else np.empty(0)
        late = int((col > limit).sum()) + int(design.x_new_published[j] > limit)
        if late:
            out.append(Violation(origin, meta.name, "future_publication",
                                 f"{late} cell(s) published after {origin.isoformat()}"))
        for st in meta.standardize:
            if st.max_published is not None and st.max_published > origin:
                out.append(Violation(origin, meta.name, "future_standardization",
                                     f"standardization inputs published up to {st.max_published.isoformat()}"))
            outside = sorted(set(st.periods) - set(meta.allowed_window))
            if outside:
                out.append(Violation(origin, meta.name, "standardization_outside_window",
                                     f"{len(outside)} period(s) outside the training window, e.g. {outside[0]}"))
    return out, cells


def leakage_audit(plan: EvaluationPlan, log: ObservationLog) -> AuditVerdict:
    """Walk every design of the plan; violations are data, not errors."""
    violations, cells, checked = [], 0, 0
    for origin in plan.origins:
        try:
            design = assemble_design(log.snapshot_at(origin), plan.recipe, log=log, max_rows=plan.max_rows)
        except NowcastError:
            continue
        v, c = audit_design(design)
        violations.extend(v)
        cells += c
        checked += 1
    return AuditVerdict(tuple(violations), checked, cells)


def write_losses_csv(path, table: LossTable, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "origin", "target_period", "forecast", "actual", "sqerr", "abserr", "config_hash"])
        for m, o, t, f, a, sq, ab in table.to_rows():
            w.writerow([m, o.isoformat(), t, repr(float(f)), repr(float(a)), repr(float(sq)), repr(float(ab)),
                        config_hash])


def write_forecasts_csv(path, records: Sequence[ForecastRecord], config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER + ["config_hash"])
        for r in records:
            w.writerow(r.row() + [config_hash])
