"""Run configuration: one YAML document validated against a published JSON schema."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import yaml

from .bootstrap import BlockBootstrapConfig
from .errors import ValidationError
from .models.spec import ModelSpec
from .vintage import Recipe, load_recipe
from .vintage.periods import parse_date, period_end, shift_period

CONFIG_VERSION = 1
ENV_PATHS = {
    "NOWCAST_OBSERVATIONS": "observations",
    "NOWCAST_RECIPE": "recipe",
    "NOWCAST_OUTPUT_DIR": "output_dir",
    "NOWCAST_AUDIT_LOG": "audit_log",
}
ENV_JOBS = "NOWCAST_N_JOBS"

_DATE = {"type": "string", "pattern": r"^\d{4}-\d{2}-\d{2}$"}
_NUM = {"type": "number"}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "nowcast run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["paths", "plan", "reporting"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "required": ["observations", "output_dir"],
            "properties": {
                "observations": {"type": "string"},
                "recipe": {"type": "string"},
                "output_dir": {"type": "string"},
                "audit_log": {"type": "string"},
            },
        },
        "recipe": {"type": "object"},
        "plan": {
            "type": "object",
            "additionalProperties": False,
            "required": ["origins", "portfolio"],
            "properties": {
                "origins": {
                    "oneOf": [
                        {"type": "array", "items": _DATE, "minItems": 1},
                        {"type": "object", "additionalProperties": False, "required": ["first_quarter", "count"],
                         "properties": {"first_quarter": {"type": "string", "pattern": r"^\d{4}-Q[1-4]$"},
                                        "count": {"type": "integer", "minimum": 1},
                                        "days_after": {"type": "integer", "minimum": 0}}},
                    ]
                },
                "window": {"enum": ["expanding", "rolling"]},
                "window_length": {"type": ["integer", "null"], "minimum": 1},
                "min_rows": {"type": "integer", "minimum": 1},
                "portfolio": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "object", "additionalProperties": False, "required": ["family"],
                              "properties": {"family": {"type": "string"}, "name": {"type": "string"},
                                             "seed": {"type": "integer"}, "hyperparams": {"type": "object"}}},
                },
                "benchmarks": {"type": "array", "items": {"type": "string"}},
                "margin": {"type": "number", "minimum": 0},
                "n_jobs": {"type": "integer", "minimum": 1},
            },
        },
        "bootstrap": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scheme": {"enum": ["moving_block", "stationary"]},
                "block_length": {"type": ["integer", "null"], "minimum": 1},
                "p": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
                "replicates": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "unit": {"enum": ["observed_row_vectors", "residuals"]},
                "predictive": {"type": "boolean"},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "explainability": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ig_baseline": {"oneOf": [{"enum": ["zeros", "window_median", "preshock_mean"]},
                                          {"type": "array", "items": _NUM}]},
                "ig_steps": {"type": "integer", "minimum": 16},
                "preshock_rows": {"type": "integer", "minimum": 1},
                "permutation_block_length": {"type": "integer", "minimum": 1},
                "permutation_repetitions": {"type": "integer", "minimum": 1},
                "bands": {"type": "boolean"},
                "rank_shift_threshold": {"type": "integer", "minimum": 0},
                "priors": {"type": "object", "additionalProperties": {"enum": [-1, 1]}},
            },
        },
        "mcs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "statistic": {"const": "T_R"},
                "loss": {"enum": ["sqerr", "abserr"]},
                "replicates": {"type": "integer", "minimum": 1},
                "block_length": {"type": ["integer", "null"], "minimum": 1},
                "seed": {"type": "integer"},
                "window": {"type": "string"},
                "combine": {"enum": ["survivors", "all"]},
                "scheme": {"enum": ["equal", "inverse_cumulative", "exponential"]},
                "eta": {"type": "number", "minimum": 0},
            },
        },
        "reporting": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tolerance"],
            "properties": {
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "top_k": {"type": "integer", "minimum": 1},
                "actuals_vintage": {"enum": ["latest", "first"]},
                "actuals_as_of": _DATE,
                "model": {"type": "string"},
                "rolling_coverage": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "plan": {"window": "expanding", "window_length": None, "min_rows": 8, "benchmarks": [], "margin": 0.05,
             "n_jobs": 1},
    "bootstrap": {"scheme": "moving_block", "block_length": None, "p": None, "replicates": 199, "seed": 0,
                  "unit": "observed_row_vectors", "predictive": True, "alpha": 0.10},
    "explainability": {"ig_baseline": "window_median", "ig_steps": 64, "preshock_rows": 8,
                       "permutation_block_length": 4, "permutation_repetitions": 50, "bands": False,
                       "rank_shift_threshold": 3, "priors": {}},
    "mcs": {"alpha": 0.10, "statistic": "T_R", "loss": "sqerr", "replicates": 999, "block_length": None,
            "seed": 0, "window": "full", "combine": "survivors", "scheme": "equal", "eta": 1.0},
    "reporting": {"top_k": 10, "actuals_vintage": "latest", "actuals_as_of": None, "model": None,
                  "rolling_coverage": 8},
}


def quarterly_origins(first_quarter: str, count: int, days_after: int = 80) -> list[date]:
    """``days_after`` days past the end of ``count`` consecutive quarters."""
    return [period_end(shift_period(first_quarter, k)) + timedelta(days=days_after) for k in range(count)]


@dataclass(frozen=True)
class RunConfig:
    raw: Mapping[str, Any]
    base_dir: Path
    paths: Mapping[str, Path]
    recipe: Recipe
    origins: tuple[date, ...]
    portfolio: tuple[ModelSpec, ...]
    plan: Mapping[str, Any]
    bootstrap: BlockBootstrapConfig
    alpha: float
    explainability: Mapping[str, Any]
    mcs: Mapping[str, Any]
    mcs_bootstrap: BlockBootstrapConfig
    reporting: Mapping[str, Any]
    n_jobs: int
    config_hash: str

    @property
    def output_dir(self) -> Path:
        return self.paths["output_dir"]

    @property
    def release_model(self) -> str:
        return self.reporting["model"] or self.portfolio[0].model_id

    def appendix_sections(self) -> dict:
        return {
            "data": {"observations": str(self.paths["observations"]), "target": self.recipe.target.series,
                     "series": sorted({f.series for f in self.recipe.features})},
            "transformations": self.recipe.to_dict(),
            "update_rules": {"origins": [o.isoformat() for o in self.origins], "window": self.plan["window"],
                             "window_length": self.plan["window_length"], "min_rows": self.plan["min_rows"]},
            "models": [s.to_dict() for s in self.portfolio],
            "explainability": dict(self.explainability),
            "bootstrap": dict(self.bootstrap.to_dict(), alpha=self.alpha),
            "combination": dict(self.mcs),
            "reporting": dict(self.reporting, config_hash=self.config_hash),
        }


def _merged(doc: Mapping) -> dict:
    out = copy.deepcopy(dict(doc))
    for section, defaults in DEFAULTS.items():
        merged = copy.deepcopy(defaults)
        merged.update(out.get(section) or {})
        out[section] = merged
    return out


def config_hash(doc: Mapping) -> str:
    """Digest of everything that can change results. Paths and parallelism are excluded."""
    semantic = {k: v for k, v in doc.items() if k != "paths"}
    semantic["plan"] = {k: v for k, v in semantic["plan"].items() if k != "n_jobs"}
    text = json.dumps(semantic, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path, env: Mapping[str, str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file {path} does not exist")
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ValidationError(f"config is not valid YAML: {exc}") from exc
    return build_config(doc, path.parent, os.environ if env is None else env)


def _jsonify(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, date):
        return obj.isoformat()
    return obj


def build_config(doc, base_dir=".", env: Mapping[str, str] | None = None) -> RunConfig:
    env = env or {}
    if not isinstance(doc, Mapping):
        raise ValidationError("config must be a mapping")
    doc = _jsonify(doc)
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ValidationError(f"config invalid at {where}: {exc.message}") from exc
    base = Path(base_dir)
    raw_paths = dict(doc["paths"])
    for var, key in ENV_PATHS.items():
        if env.get(var):
            raw_paths[key] = env[var]
    paths = {k: (base / v) if not Path(v).is_absolute() else Path(v) for k, v in raw_paths.items()}
    paths.setdefault("audit_log", paths["output_dir"] / "audit.jsonl")
    if not paths["observations"].is_file():
        raise ValidationError(f"observation file {paths['observations']} does not exist")

    if "recipe" in doc and "recipe" in raw_paths:
        raise ValidationError("give the recipe either inline or as a path, not both")
    if "recipe" in doc:
        recipe = Recipe.from_dict(doc["recipe"])
    elif "recipe" in paths:
        if not paths["recipe"].is_file():
            raise ValidationError(f"recipe file {paths['recipe']} does not exist")
        recipe = load_recipe(paths["recipe"])
    else:
        raise ValidationError("config needs a recipe (inline or paths.recipe)")

    doc = _merged(doc)
    doc["recipe"] = recipe.to_dict()
    plan = doc["plan"]
    o = plan["origins"]
    origins = tuple(parse_date(x) for x in o) if isinstance(o, list) else tuple(
        quarterly_origins(o["first_quarter"], o["count"], o.get("days_after", 80)))
    portfolio = tuple(ModelSpec(p["family"], dict(p.get("hyperparams", {})), p.get("seed", 0), p.get("name"))
                      for p in plan["portfolio"])
    ids = [s.model_id for s in portfolio]
    rep = doc["reporting"]
    if rep["model"] is not None and rep["model"] not in ids:
        raise ValidationError(f"reporting.model {rep['model']!r} is not in the portfolio {ids}")
    unknown_bench = set(plan["benchmarks"]) - set(ids)
    if unknown_bench:
        raise ValidationError(f"benchmarks {sorted(unknown_bench)} are not in the portfolio")
    if doc["mcs"]["window"] != "full":
        raise ValidationError(f"mcs.window {doc['mcs']['window']!r} is not supported; rolling-window "
                              "confidence sets are not implemented, use 'full'")
    b = dict(doc["bootstrap"])
    alpha = b.pop("alpha")
    boot = BlockBootstrapConfig(**b)
    m = doc["mcs"]
    mcs_boot = BlockBootstrapConfig("moving_block", m["block_length"], None, m["replicates"], m["seed"])
    n_jobs = plan["n_jobs"]
    if env.get(ENV_JOBS):
        try:
            n_jobs = int(env[ENV_JOBS])
        except ValueError as exc:
            raise ValidationError(f"{ENV_JOBS} must be an integer") from exc
        if n_jobs < 1:
            raise ValidationError(f"{ENV_JOBS} must be >= 1")
    priors = doc["explainability"]["priors"]
    names = {f.name for f in recipe.features}
    if set(priors) - names:
        raise ValidationError(f"priors given for unknown features {sorted(set(priors) - names)}")
    return RunConfig(doc, base, paths, recipe, origins, portfolio, plan, boot, alpha, doc["explainability"],
                     m, mcs_boot, rep, n_jobs, config_hash(doc))


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n"


__all__ = ["RunConfig", "SCHEMA", "build_config", "config_hash", "load_config", "quarterly_origins",
           "schema_json"]
