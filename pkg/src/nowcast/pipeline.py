"""End-to-end workflows behind the command-line interface."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .bootstrap import (
    BootstrapResult,
    PredictionInterval,
    bootstrap_model_data,
    coverage_report,
    percentile_interval,
    write_intervals_csv,
)
from .combination import combine_forecasts, mcs, weight_trajectory, write_mcs_csv, write_weights_csv
from .config import RunConfig
from .errors import NowcastError, ReleaseRefusedError, ValidationError
from .explain import (
    AttributionVector,
    importance_bands,
    integrated_gradients,
    linear_contributions,
    stability_report,
    tree_shap,
    write_attributions_csv,
    write_stability_csv,
)
from .models import dumps_model, fit_model, linear_representation, predict
from .models.spec import NEURAL, TREES, FittedModel, ModelData, prepare_data
from .reporting import (
    AuditRecord,
    AuditTrail,
    assemble_release,
    canonical_json,
    dashboard,
    methodological_appendix,
    pick_fallback,
    render_summary,
)
from .vintage import ObservationLog, assemble_design
from .walk_forward import (
    AuditVerdict,
    EvaluationPlan,
    LossTable,
    actuals_for,
    audit_design,
    benchmark_filter,
    compute_losses,
    forecast_records,
    leakage_audit,
    run_walk_forward,
    write_forecasts_csv,
    write_losses_csv,
)

log = logging.getLogger(__name__)


def load_log(cfg: RunConfig) -> ObservationLog:
    return ObservationLog.from_csv(cfg.paths["observations"])


def build_plan(cfg: RunConfig) -> EvaluationPlan:
    p = cfg.plan
    return EvaluationPlan(cfg.origins, cfg.recipe, cfg.portfolio, p["window"], p["window_length"],
                          tuple(p["benchmarks"]), min_rows=p["min_rows"])


def _spec(cfg: RunConfig, model_id: str):
    return next(s for s in cfg.portfolio if s.model_id == model_id)


def local_attribution(model: FittedModel, data: ModelData, cfg: RunConfig, origin=None) -> AttributionVector:
    """Additive attribution of the forecast at ``data.x_new``, chosen by family."""
    fam = model.family
    ex = cfg.explainability
    if fam in TREES:
        return tree_shap(model, data.x_new, origin)
    if fam in NEURAL:
        X = np.asarray(data.X)
        return integrated_gradients(model, data.x_new, ex["ig_baseline"], ex["ig_steps"], window=X,
                                    preshock=X[:ex["preshock_rows"]], origin=origin)
    if linear_representation(model) is not None:
        return linear_contributions(model, data.x_new, origin)
    # random walks ignore the feature row, so every contribution is zero
    point = predict(model, data.x_new)
    return AttributionVector(origin, model.model_id, "coefficients", model.feature_names,
                             np.zeros(len(model.feature_names)), base_value=point, prediction=point,
                             metadata={"scope": "local", "reference": "constant_forecast"})


def _attribution_method(model: FittedModel) -> str:
    if model.family in TREES:
        return "tree_shap"
    if model.family in NEURAL:
        return "integrated_gradients"
    return "linear_contributions"


def interval_for(cfg: RunConfig, model_id: str, data: ModelData, origin, base_model=None):
    res: BootstrapResult = bootstrap_model_data(_spec(cfg, model_id), data, cfg.bootstrap, base_model)
    return percentile_interval(res.replicates, cfg.alpha, res.point, origin), res


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n")


def _default(o):
    if isinstance(o, date):
        return o.isoformat()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


@dataclass
class BacktestResult:
    table: LossTable
    intervals: list[PredictionInterval]
    coverage: Any
    filter: dict
    mcs: Any
    trajectory: Any
    combined: dict
    attributions: list[AttributionVector]
    stability: Any
    verdict: AuditVerdict | None = None
    files: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)


def run_backtest(cfg: RunConfig, obs: ObservationLog, write: bool = True) -> BacktestResult:
    """Walk forward, score, build intervals for the release model, then select and combine."""
    plan = build_plan(cfg)
    runs = run_walk_forward(plan, obs, n_jobs=cfg.n_jobs, keep=True)
    records = forecast_records(runs)
    rep = cfg.reporting
    periods = [r.target_period for r in records if r.target_period]
    actuals = actuals_for(obs, cfg.recipe, periods, rep["actuals_vintage"], rep["actuals_as_of"])
    table = compute_losses(records, actuals, plan.model_ids)
    notes = []

    release = cfg.release_model
    intervals, attributions = [], []
    for run in runs:
        if release not in run.models:
            continue
        data = run.data[release]
        try:
            iv, _ = interval_for(cfg, release, data, run.origin, run.models[release])
        except NowcastError as exc:
            notes.append(f"{run.origin}: interval skipped: {exc}")
            continue
        intervals.append(iv)
        a = local_attribution(run.models[release], data, cfg, run.origin)
        attributions.append(AttributionVector(a.origin, a.model_id, a.method, a.features, a.values, a.base_value,
                                              a.prediction, dict(a.metadata, data_digest=run.design.content_digest())))
    target_of = {o: t for o, t in zip(table.origins, table.target_periods)}
    cov_actuals = {iv.origin: actuals.get(target_of.get(iv.origin)) for iv in intervals}
    coverage = None
    if any(v is not None for v in cov_actuals.values()):
        coverage = coverage_report(intervals, cov_actuals)
    stability = None
    feature_sets = {a.features for a in attributions}
    if len(attributions) >= 2 and len(feature_sets) == 1:
        stability = stability_report(attributions, cfg.explainability["priors"] or None,
                                     cfg.explainability["rank_shift_threshold"])
    elif len(feature_sets) > 1:
        notes.append("stability skipped: the feature set changes across origins")

    filt = benchmark_filter(table, plan.benchmark_ids, cfg.plan["margin"]) if plan.benchmark_ids else \
        {m: "retained" for m in plan.model_ids}
    retained = tuple(m for m in plan.model_ids if filt[m] == "retained")
    m = cfg.mcs
    conf = None
    try:
        conf = mcs(table, m["alpha"], cfg.mcs_bootstrap, m["loss"], retained)
    except ValidationError as exc:
        notes.append(f"mcs skipped: {exc}")
    members = conf.survivors if (conf is not None and m["combine"] == "survivors") else retained
    trajectory = None
    combined = {}
    scored = table.common_columns(members)
    if len(table.origins) >= 2:
        trajectory = weight_trajectory(table, m["scheme"], m["eta"], members, m["loss"])
        for j, (o, w) in enumerate(zip(table.origins, trajectory.weights)):
            col = [table.model_ids.index(x) for x in members]
            f = table.forecasts[col, j]
            if np.isfinite(f).all():
                combined[o] = combine_forecasts(dict(zip(members, f)), w)
    result = BacktestResult(table, intervals, coverage, filt, conf, trajectory, combined, attributions, stability,
                            notes=notes)
    if write:
        _write_backtest(cfg, result, records, len(scored))
        AuditTrail(cfg.paths["audit_log"]).append(AuditRecord(
            _timestamp(), "backtest", cfg.config_hash, obs.digest(), _portfolio_version(cfg),
            _outputs_digest(result.files), event="backtest",
            detail={"mcs_elimination": [list(e) for e in conf.elimination_order] if conf else None,
                    "mcs_survivors": list(conf.survivors) if conf else None}))
    return result


def _timestamp() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def _portfolio_version(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json([s.to_dict() for s in cfg.portfolio]).encode()).hexdigest()[:16]


def _outputs_digest(files: dict) -> str:
    return hashlib.sha256(canonical_json({k: file_digest(v) for k, v in sorted(files.items())}).encode()).hexdigest()


def _write_backtest(cfg: RunConfig, res: BacktestResult, records, n_common: int) -> None:
    out = cfg.output_dir / "backtest"
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash
    files = {name: out / name for name in ("forecasts.csv", "losses.csv", "intervals.csv", "summary.json")}
    write_forecasts_csv(files["forecasts.csv"], records, h)
    write_losses_csv(files["losses.csv"], res.table, h)
    write_intervals_csv(files["intervals.csv"], [(cfg.release_model, iv) for iv in res.intervals], h)
    if res.mcs is not None:
        files["mcs.csv"] = out / "mcs.csv"
        write_mcs_csv(files["mcs.csv"], res.mcs, h)
    if res.trajectory is not None:
        files["weights.csv"] = out / "weights.csv"
        write_weights_csv(files["weights.csv"], res.trajectory, h)
    files["combined.csv"] = out / "combined.csv"
    with open(files["combined.csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "combined_point", "scheme", "config_hash"])
        for o, v in sorted(res.combined.items()):
            w.writerow([o.isoformat(), repr(float(v)), cfg.mcs["scheme"], h])
    if res.attributions:
        files["attributions.csv"] = out / "attributions.csv"
        write_attributions_csv(files["attributions.csv"], res.attributions, h)
    if res.stability is not None:
        files["stability.csv"] = out / "stability.csv"
        write_stability_csv(files["stability.csv"], res.stability, h)
    cov = res.coverage
    summary = {
        "config_hash": h,
        "models": res.table.summary(common=True),
        "benchmark_filter": res.filter,
        "coverage": None if cov is None else {"nominal": cov.nominal, "empirical": cov.empirical,
                                              "mean_width": cov.mean_width, "resolved": len(cov.hits)},
        "mcs": None if res.mcs is None else {"survivors": list(res.mcs.survivors),
                                             "elimination_order": [list(e) for e in res.mcs.elimination_order],
                                             "statistic": res.mcs.statistic, "alpha": res.mcs.level},
        "combination": {"scheme": cfg.mcs["scheme"], "members": cfg.mcs["combine"],
                        "turnover": None if res.trajectory is None else res.trajectory.total_turnover,
                        "common_origins": n_common},
        "notes": res.notes,
    }
    write_json(files["summary.json"], summary)
    res.files = {k: str(v) for k, v in files.items()}


@dataclass
class NowcastResult:
    package: Any
    record: Any
    files: dict


def run_nowcast(cfg: RunConfig, obs: ObservationLog, origin: date) -> NowcastResult:
    """Fit the portfolio at one origin and assemble the release package, or refuse."""
    snap = obs.snapshot_at(origin)
    design = assemble_design(snap, cfg.recipe, log=obs, max_rows=build_plan(cfg).max_rows)
    violations, cells = audit_design(design)
    verdict = AuditVerdict(tuple(violations), 1, cells)
    trail = AuditTrail(cfg.paths["audit_log"])
    version = _portfolio_version(cfg)
    if not verdict.clean:
        trail.append(AuditRecord(_timestamp(), "nowcast", cfg.config_hash, obs.digest(), version, verdict.digest(),
                                 event="release_refused",
                                 detail={"origin": origin.isoformat(),
                                         "violations": [v.as_dict() for v in verdict.violations]}))
        raise ReleaseRefusedError(f"release refused: leakage detected in {', '.join(sorted(verdict.features()))}",
                                  verdict.violations)
    models, datas, candidates = {}, {}, {}
    for spec in cfg.portfolio:
        try:
            data = prepare_data(spec, design)
            model = fit_model(spec, data)
            models[spec.model_id], datas[spec.model_id] = model, data
            candidates[spec.model_id] = (spec.family, predict(model, data.x_new))
        except NowcastError as exc:
            log.warning("%s skipped at %s: %s", spec.model_id, origin, exc)
            candidates[spec.model_id] = (spec.family, None)
    release = cfg.release_model
    if release not in models:
        raise ValidationError(f"release model {release!r} could not be fitted at {origin}")
    model, data = models[release], datas[release]
    iv, res = interval_for(cfg, release, data, origin, model)
    attr = local_attribution(model, data, cfg, origin)
    profile = None
    if cfg.explainability["bands"]:
        opts = {}
        if attr.method == "integrated_gradients":
            opts = {"baseline": cfg.explainability["ig_baseline"], "steps": cfg.explainability["ig_steps"]}
        profile = importance_bands(_spec(cfg, release), data, _attribution_method(model), cfg.bootstrap,
                                   cfg.alpha, **opts)
    others = {k: v for k, v in candidates.items() if k != release}
    benchmark = pick_fallback(others)
    pkg, record = assemble_release(origin, iv, attr, verdict, cfg.reporting["tolerance"], model_id=release,
                                   model_version=fit_digest(model), config_hash=cfg.config_hash,
                                   log_digest=obs.digest(), bootstrap_echo=res.echo(), benchmark=benchmark,
                                   block_tags=design.block_tags(), profile=profile,
                                   top_k=cfg.reporting["top_k"], timestamp=_timestamp())
    out = cfg.output_dir / "nowcast" / origin.isoformat()
    out.mkdir(parents=True, exist_ok=True)
    files = {"package.json": out / "package.json", "summary.txt": out / "summary.txt",
             "appendix.txt": out / "appendix.txt", "attributions.csv": out / "attributions.csv"}
    files["package.json"].write_text(pkg.to_json())
    files["summary.txt"].write_text(render_summary(pkg))
    files["appendix.txt"].write_text(methodological_appendix(cfg.appendix_sections()))
    write_attributions_csv(files["attributions.csv"], [attr], cfg.config_hash)
    trail.append(record)
    return NowcastResult(pkg, record, {k: str(v) for k, v in files.items()})


def fit_digest(model: FittedModel) -> str:
    return hashlib.sha256(dumps_model(model).encode()).hexdigest()[:16]


@dataclass
class AuditResult:
    verdict: AuditVerdict
    dashboard: Any
    files: dict


def run_audit(cfg: RunConfig, obs: ObservationLog) -> AuditResult:
    """Leakage audit over every plan origin plus the monitoring dashboard."""
    verdict = leakage_audit(build_plan(cfg), obs)
    out = cfg.output_dir / "audit"
    out.mkdir(parents=True, exist_ok=True)
    files = {"verdict.json": out / "verdict.json"}
    write_json(files["verdict.json"], {"config_hash": cfg.config_hash, "clean": verdict.clean,
                                       "origins_checked": verdict.origins_checked,
                                       "cells_checked": verdict.cells_checked,
                                       "violations": [v.as_dict() for v in verdict.violations]})
    dash = None
    if verdict.clean:
        bt = run_backtest(cfg, obs, write=False)
        bench = cfg.plan["benchmarks"][0] if cfg.plan["benchmarks"] else cfg.release_model
        dash = dashboard(bt.table, bt.coverage, bt.stability, bench, rolling=cfg.reporting["rolling_coverage"])
        files["dashboard.json"] = out / "dashboard.json"
        write_json(files["dashboard.json"], dict(dash.to_dict(), config_hash=cfg.config_hash, notes=bt.notes))
    AuditTrail(cfg.paths["audit_log"]).append(AuditRecord(
        _timestamp(), "audit", cfg.config_hash, obs.digest(), _portfolio_version(cfg),
        _outputs_digest(files), event="audit", detail={"clean": verdict.clean}))
    return AuditResult(verdict, dash, {k: str(v) for k, v in files.items()})
