"""Release packages, fallback protocol, dashboard indicators and the audit trail."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .bootstrap import CoverageReport, PredictionInterval
from .errors import ReleaseRefusedError, ValidationError
from .explain import AttributionVector, ImportanceProfile, StabilityReport
from .walk_forward import AuditVerdict, LossTable

SCHEMA = "nowcast-release"
SCHEMA_VERSION = 1
TOP_K = 10
FALLBACK_ORDER = ("ar", "rw_drift")
OTHER_BLOCK = "other"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, (date, datetime)):
        return obj.isoformat()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# waterfall --------------------------------------------------------------------

@dataclass(frozen=True)
class Waterfall:
    """Base value, per-block contributions and the reconciliation residual for one forecast."""

    method: str
    base: float
    blocks: tuple[tuple[str, float], ...]
    residual: float
    point: float

    def total(self) -> float:
        return self.base + sum(v for _, v in self.blocks) + self.residual

    def to_dict(self) -> dict:
        return {"method": self.method, "base": self.base, "blocks": [list(b) for b in self.blocks],
                "residual": self.residual, "point": self.point}


def waterfall_decomposition(attr: AttributionVector, block_tags: Mapping[str, str] | None = None) -> Waterfall:
    """Sum additive attributions by information block.

    Features without a tag go to ``"other"``. Blocks keep the order in which
    they first appear among the features.
    """
    if not attr.additive:
        raise ValidationError(f"{attr.method} attributions are not additive; use tree_shap, integrated_gradients "
                              "or local linear contributions for a waterfall")
    tags = block_tags or {}
    sums: dict[str, float] = {}
    for name, v in zip(attr.features, attr.values):
        block = tags.get(name, OTHER_BLOCK)
        sums[block] = sums.get(block, 0.0) + float(v)
    point = float(attr.prediction)
    residual = point - float(attr.base_value) - sum(sums.values())
    return Waterfall(attr.method, float(attr.base_value), tuple(sums.items()), residual, point)


# fallback -------------------------------------------------------------------------

@dataclass(frozen=True)
class FallbackDecision:
    point: float
    low_confidence: bool
    fallback_used: bool
    width: float
    tolerance: float
    ml_point: float
    fallback_model: str | None = None


def fallback_check(interval: PredictionInterval, tolerance: float, benchmark_forecast: float | None = None,
                   benchmark_id: str | None = None) -> FallbackDecision:
    """Keep the model point unless the interval is strictly wider than ``tolerance``."""
    if not tolerance > 0:
        raise ValidationError("tolerance must be > 0")
    width = interval.width
    if width > tolerance:
        if benchmark_forecast is None or not np.isfinite(benchmark_forecast):
            raise ValidationError(f"interval width {width:.4g} exceeds tolerance {tolerance:.4g} "
                                  "but no benchmark forecast is available for the fallback")
        return FallbackDecision(float(benchmark_forecast), True, True, width, tolerance, interval.point,
                                benchmark_id)
    return FallbackDecision(interval.point, False, False, width, tolerance, interval.point)


def pick_fallback(candidates: Mapping[str, tuple[str, float | None]]) -> tuple[str, float] | None:
    """First available benchmark by family preference: AR first, then random walk with drift.

    ``candidates`` maps model id to ``(family, forecast)``.
    """
    for fam in FALLBACK_ORDER:
        for mid in sorted(candidates):
            f, value = candidates[mid]
            if f == fam and value is not None and np.isfinite(value):
                return mid, float(value)
    return None


# dashboard ----------------------------------------------------------------------

@dataclass(frozen=True)
class DashboardMetrics:
    window: tuple[date, date]
    coverage: Mapping[str, Any]
    stability: Mapping[str, Any]
    benchmark_distance: Mapping[str, Mapping[str, float]]
    instability_signals: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {"window": list(self.window), "coverage": dict(self.coverage), "stability": dict(self.stability),
                "benchmark_distance": {k: dict(v) for k, v in self.benchmark_distance.items()},
                "instability_signals": list(self.instability_signals)}


def rolling_mean(values, k: int) -> list[float]:
    v = np.asarray(values, float)
    if len(v) < k:
        return [float(v.mean())] if len(v) else []
    c = np.concatenate([[0.0], np.cumsum(v)])
    return list(map(float, (c[k:] - c[:-k]) / k))


def _overlap(windows):
    lo = max(w[0] for w in windows)
    hi = min(w[1] for w in windows)
    if lo > hi:
        raise ValidationError(f"input windows do not overlap: {windows}")
    return lo, hi


def dashboard(table: LossTable, coverage: CoverageReport | None, stability: StabilityReport | None,
              benchmark_id: str, model_ids: Sequence[str] | None = None, rolling: int = 8) -> DashboardMetrics:
    """The four monitoring groups over the common window of the inputs."""
    if benchmark_id not in table.model_ids:
        raise ValidationError(f"benchmark {benchmark_id!r} is not in the loss table")
    windows = [(table.origins[0], table.origins[-1])]
    if coverage is not None and coverage.window:
        windows.append(coverage.window)
    if stability is not None:
        so = [o for o in stability.origins if o is not None]
        if so:
            windows.append((min(so), max(so)))
    window = _overlap(windows)
    stats = table.summary(common=True)
    ref = stats[benchmark_id]
    if not (ref["rmsfe"] > 0 and ref["mafe"] > 0):
        raise ValidationError("benchmark losses are zero; distance ratios are undefined")
    distance = {m: {"rmsfe_ratio": stats[m]["rmsfe"] / ref["rmsfe"], "mafe_ratio": stats[m]["mafe"] / ref["mafe"]}
                for m in (model_ids or table.model_ids)}
    cov = {}
    if coverage is not None:
        cov = {"window": coverage.window, "nominal": coverage.nominal, "empirical": coverage.empirical,
               "rolling": rolling_mean(coverage.hits, rolling), "rolling_length": rolling,
               "mean_width": coverage.mean_width}
    stab, signals = {}, []
    if stability is not None:
        stab = {"window": (stability.origins[0], stability.origins[-1]),
                "median_rank_correlation": float(np.median(stability.rank_correlations)),
                "rank_correlations": list(map(float, stability.rank_correlations)),
                "median_iqr": float(np.median(stability.iqr)),
                "iqr": dict(zip(stability.features, map(float, stability.iqr)))}
        signals.extend(dict(f, kind="rank_shift") for f in stability.flags)
        signals.extend(dict(r, kind="sign_inconsistency") for r in stability.sign_table if r["listed"])
    return DashboardMetrics(window, cov, stab, distance, tuple(signals))


# release package -------------------------------------------------------------------

@dataclass(frozen=True)
class ReleasePackage:
    origin: date
    point: float
    interval: PredictionInterval
    waterfall: Waterfall
    driver_table: tuple[dict, ...]
    flags: Mapping[str, bool]
    provenance: Mapping[str, Any]

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "schema_version": SCHEMA_VERSION, "origin": self.origin.isoformat(),
                "point": self.point, "interval": self.interval.to_dict(), "waterfall": self.waterfall.to_dict(),
                "driver_table": list(self.driver_table), "flags": dict(self.flags),
                "provenance": dict(self.provenance)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_jsonable) + "\n"

    def digest(self) -> str:
        return sha256(canonical_json(self.to_dict()))


@dataclass(frozen=True)
class AuditRecord:
    timestamp: str
    actor: str
    config_hash: str
    data_log_digest: str
    model_version: str
    outputs_digest: str
    event: str = "release"
    detail: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "actor": self.actor, "event": self.event,
                "config_hash": self.config_hash, "data_log_digest": self.data_log_digest,
                "model_version": self.model_version, "outputs_digest": self.outputs_digest,
                "detail": dict(self.detail)}


def _now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def driver_table(attr: AttributionVector, profile: ImportanceProfile | None = None, k: int = TOP_K) -> tuple[dict, ...]:
    rows = []
    for name, value in attr.top(k):
        row = {"feature": name, "attribution": value}
        if profile is not None and name in profile.features:
            j = profile.features.index(name)
            row["band"] = [float(profile.signed_lower[j]), float(profile.signed_upper[j])]
        rows.append(row)
    return tuple(rows)


def assemble_release(origin: date, interval: PredictionInterval | None, attribution: AttributionVector | None,
                     verdict: AuditVerdict | None, tolerance: float, *, model_id: str, model_version: str,
                     config_hash: str, log_digest: str, bootstrap_echo: Mapping | None = None,
                     benchmark: tuple[str, float] | None = None, block_tags: Mapping[str, str] | None = None,
                     profile: ImportanceProfile | None = None, top_k: int = TOP_K, actor: str = "nowcast",
                     timestamp: str | None = None) -> tuple[ReleasePackage, AuditRecord]:
    """Build the release package and its audit record, or refuse.

    A dirty leakage verdict raises ReleaseRefusedError naming the offending
    features, so no package with ``leakage_clean = false`` can exist.
    """
    if verdict is None:
        raise ValidationError("a leakage audit verdict is required before release")
    if not verdict.clean:
        feats = sorted(verdict.features())
        raise ReleaseRefusedError(f"release refused: leakage detected in {', '.join(feats)}", verdict.violations)
    if interval is None:
        raise ValidationError("release needs a prediction interval")
    if attribution is None:
        raise ValidationError("release needs a driver attribution")
    wf = waterfall_decomposition(attribution, block_tags)
    bench_id, bench_value = benchmark if benchmark else (None, None)
    decision = fallback_check(interval, tolerance, bench_value, bench_id)
    provenance = {"model_id": model_id, "model_version": model_version, "config_hash": config_hash,
                  "data_log_digest": log_digest, "bootstrap": dict(bootstrap_echo or {}),
                  "attribution_method": attribution.method, "attribution_metadata": dict(attribution.metadata),
                  "ml_point": decision.ml_point, "interval_width": decision.width, "tolerance": tolerance,
                  "fallback_model": decision.fallback_model, "leakage_audit_digest": verdict.digest()}
    flags = {"low_confidence": decision.low_confidence, "fallback_used": decision.fallback_used,
             "leakage_clean": True}
    pkg = ReleasePackage(origin, decision.point, interval, wf, driver_table(attribution, profile, top_k), flags,
                         provenance)
    record = AuditRecord(timestamp or _now(), actor, config_hash, log_digest, model_version, pkg.digest(),
                         detail={"origin": origin.isoformat()})
    return pkg, record


def render_summary(pkg: ReleasePackage) -> str:
    iv = pkg.interval
    lines = [
        f"Nowcast release for origin {pkg.origin.isoformat()}",
        f"  point: {pkg.point:.4f}",
        f"  {100 * (1 - iv.alpha):.0f}% interval: [{iv.lower:.4f}, {iv.upper:.4f}] (width {iv.width:.4f})",
        f"  model: {pkg.provenance['model_id']} ({pkg.provenance['model_version'][:12]})",
    ]
    if pkg.flags["fallback_used"]:
        lines.append(f"  LOW CONFIDENCE: interval wider than tolerance {pkg.provenance['tolerance']}; "
                     f"published the {pkg.provenance['fallback_model']} benchmark instead of "
                     f"{pkg.provenance['ml_point']:.4f}")
    lines.append(f"  waterfall ({pkg.waterfall.method}): base {pkg.waterfall.base:.4f}")
    for name, v in pkg.waterfall.blocks:
        lines.append(f"    {name:<16} {v:+.4f}")
    lines.append(f"    {'residual':<16} {pkg.waterfall.residual:+.2e}")
    lines.append("  top drivers:")
    for row in pkg.driver_table:
        band = f"  band [{row['band'][0]:+.4f}, {row['band'][1]:+.4f}]" if "band" in row else ""
        lines.append(f"    {row['feature']:<16} {row['attribution']:+.4f}{band}")
    lines.append(f"  config hash: {pkg.provenance['config_hash']}")
    lines.append(f"  package digest: {pkg.digest()}")
    return "\n".join(lines) + "\n"


class AuditTrail:
    """Append-only JSON-lines log. Existing lines are never rewritten."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, record: AuditRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(canonical_json(record.to_dict()) + "\n")

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


def methodological_appendix(sections: Mapping[str, Any]) -> str:
    """Plain-text appendix describing data, update rules, models, attribution and bootstrap design."""
    order = ["data", "transformations", "update_rules", "models", "explainability", "bootstrap", "combination",
             "reporting"]
    titles = {"data": "Data sources", "transformations": "Transformations", "update_rules": "Update rules",
              "models": "Model specifications", "explainability": "Attribution design",
              "bootstrap": "Bootstrap design", "combination": "Model selection and combination",
              "reporting": "Release rules"}
    out = ["Methodological appendix", "=" * 23, ""]
    for key in order + sorted(set(sections) - set(order)):
        if key not in sections:
            continue
        out.append(titles.get(key, key.replace("_", " ").capitalize()))
        out.append("-" * len(out[-1]))
        out.extend(_render(sections[key], 0))
        out.append("")
    return "\n".join(out)


def _render(value, depth):
    pad = "  " * depth
    if isinstance(value, Mapping):
        lines = []
        for k in sorted(value):
            v = value[k]
            if isinstance(v, (Mapping, list, tuple)) and v:
                lines.append(f"{pad}{k}:")
                lines.extend(_render(v, depth + 1))
            else:
                lines.append(f"{pad}{k}: {_jsonable_text(v)}")
        return lines
    if isinstance(value, (list, tuple)):
        lines = []
        for v in value:
            if isinstance(v, Mapping):
                sub = _render(v, depth + 1)
                lines.append(f"{pad}- " + sub[0].strip())
                lines.extend(sub[1:])
            else:
                lines.append(f"{pad}- {_jsonable_text(v)}")
        return lines
    return [f"{pad}{_jsonable_text(value)}"]


def _jsonable_text(v) -> str:
    if isinstance(v, (date, datetime)):
        return v.isoformat()
    return str(v)
