"""Seeded synthetic panels with publication calendars and revisions."""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import timedelta
from typing import Any, Mapping

import numpy as np
import yaml

from ._rng import keyed_rng
from .errors import ValidationError
from .vintage.periods import QUARTERLY, parse_period, period_end, period_range, shift_period
from .vintage.store import SeriesObservation, write_observation_csv

KINDS = ("ar1", "sparse_linear", "factor_panel", "regime_break")
TARGET = "target"
BURN_IN = 100

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "ar1": {"phi": 0.8, "sigma": 1.0, "mu": 0.0},
    "sparse_linear": {"p": 100, "s": 10, "beta": 1.0, "sigma": 1.0},
    "factor_panel": {"r": 2, "n_series": 20, "loadings_sigma": 1.0, "idio_sigma": 0.5,
                     "factor_phi": 0.5, "sigma": 0.5},
    "regime_break": {"break_index": None, "pre": {"phi": 0.8, "sigma": 1.0},
                     "post": {"phi": 0.8, "sigma": 2.0}, "mu": 0.0},
}


@dataclass(frozen=True)
class DGPSpec:
    kind: str
    n: int
    seed: int = 0
    params: Mapping[str, Any] = field(default_factory=dict)
    start: str = "1970-Q1"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown DGP kind {self.kind!r}")
        if self.n < 2:
            raise ValidationError("n must be >= 2")
        if parse_period(self.start)[0] != QUARTERLY:
            raise ValidationError("start must be a quarterly period")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValidationError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        p = merged
        if self.kind == "ar1" and not abs(p["phi"]) < 1:
            raise ValidationError("ar1 needs |phi| < 1")
        if self.kind == "regime_break":
            for part in ("pre", "post"):
                if not abs(p[part]["phi"]) < 1 or p[part]["sigma"] < 0:
                    raise ValidationError(f"regime_break {part}: need |phi| < 1 and sigma >= 0")
            b = p["break_index"]
            if b is not None and not 0 < b < self.n:
                raise ValidationError("break_index must lie inside the sample")
        if self.kind == "sparse_linear" and not 0 <= p["s"] <= p["p"]:
            raise ValidationError("sparse_linear needs 0 <= s <= p")
        for key in ("sigma", "loadings_sigma", "idio_sigma"):
            if key in p and p[key] < 0:
                raise ValidationError(f"{key} must be >= 0")

    @property
    def periods(self) -> list[str]:
        return period_range(self.start, shift_period(self.start, self.n - 1))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "seed": self.seed, "params": dict(self.params), "start": self.start}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DGPSpec":
        return cls(d["kind"], int(d["n"]), int(d.get("seed", 0)), dict(d.get("params", {})),
                   d.get("start", "1970-Q1"))


@dataclass(frozen=True)
class Simulation:
    """Target and predictor panels keyed by series then period, plus ground truth."""

    spec: DGPSpec
    periods: tuple[str, ...]
    target: np.ndarray
    predictors: np.ndarray
    predictor_names: tuple[str, ...]
    truth: Mapping[str, Any]

    def panel(self) -> dict[str, dict[str, float]]:
        out = {TARGET: dict(zip(self.periods, map(float, self.target)))}
        for j, name in enumerate(self.predictor_names):
            out[name] = dict(zip(self.periods, map(float, self.predictors[:, j])))
        return out


def _ar_path(eps, phis, sigmas, mu):
    y = np.empty(len(eps))
    prev = 0.0
    for t in range(len(eps)):
        prev = phis[t] * prev + sigmas[t] * eps[t]
        y[t] = prev
    return mu + y


def simulate(spec: DGPSpec) -> Simulation:
    p, n = spec.params, spec.n
    periods = tuple(spec.periods)
    rng = keyed_rng(spec.seed, "dgp", spec.kind)
    if spec.kind in ("ar1", "regime_break"):
        eps = keyed_rng(spec.seed, "dgp", "ar").standard_normal(n + BURN_IN)
        if spec.kind == "ar1":
            phis = np.full(n + BURN_IN, p["phi"])
            sigmas = np.full(n + BURN_IN, p["sigma"])
            truth = {"phi": p["phi"], "sigma": p["sigma"]}
        else:
            b = p["break_index"] if p["break_index"] is not None else n // 2
            phis = np.where(np.arange(n + BURN_IN) < BURN_IN + b, p["pre"]["phi"], p["post"]["phi"])
            sigmas = np.where(np.arange(n + BURN_IN) < BURN_IN + b, p["pre"]["sigma"], p["post"]["sigma"])
            truth = {"break_index": b, "break_period": periods[b], "pre": dict(p["pre"]),
                     "post": dict(p["post"])}
        y = _ar_path(eps, phis, sigmas, p["mu"])[BURN_IN:]
        return Simulation(spec, periods, y, np.empty((n, 0)), (), truth)
    if spec.kind == "sparse_linear":
        k, s = p["p"], p["s"]
        X = rng.standard_normal((n, k))
        support = np.sort(rng.choice(k, size=s, replace=False))
        beta = np.zeros(k)
        beta[support] = p["beta"] * rng.choice([-1.0, 1.0], size=s)
        y = X @ beta + p["sigma"] * rng.standard_normal(n)
        names = tuple(f"x{j:03d}" for j in range(k))
        return Simulation(spec, periods, y, X, names,
                          {"beta": beta, "support": tuple(names[j] for j in support)})
    r, m = p["r"], p["n_series"]
    shocks = rng.standard_normal((n + BURN_IN, r))
    F = np.zeros((n + BURN_IN, r))
    for t in range(1, n + BURN_IN):
        F[t] = p["factor_phi"] * F[t - 1] + shocks[t]
    F = F[BURN_IN:]
    loadings = p["loadings_sigma"] * rng.standard_normal((r, m))
    X = F @ loadings + p["idio_sigma"] * rng.standard_normal((n, m))
    gamma = np.ones(r)
    y = F @ gamma + p["sigma"] * rng.standard_normal(n)
    names = tuple(f"x{j:03d}" for j in range(m))
    return Simulation(spec, periods, y, X, names, {"factors": F, "loadings": loadings, "gamma": gamma})


@dataclass(frozen=True)
class RevisionScheme:
    """One later revision per value: value + N(0, sd), published ``delay_days`` after the first release."""

    sd: float = 0.1
    delay_days: int = 90
    seed: int = 0


def apply_publication_lags(panel: Mapping[str, Mapping[str, float]], lags, revision: RevisionScheme | None = None,
                           frequency: str = "quarterly") -> list[SeriesObservation]:
    """Publish each value at period end + lag days, optionally followed by one revision.

    ``lags`` is a day count for every series or a per-series mapping.
    """
    out = []
    for sid in sorted(panel):
        lag = lags[sid] if isinstance(lags, Mapping) else lags
        if lag < 0:
            raise ValidationError(f"publication lag for {sid!r} must be >= 0")
        values = panel[sid]
        noise = None
        if revision is not None:
            noise = keyed_rng(revision.seed, "revision", sid).standard_normal(len(values)) * revision.sd
        for i, period in enumerate(values):
            first = period_end(period) + timedelta(days=int(lag))
            v = float(values[period])
            out.append(SeriesObservation(sid, period, v, first, frequency))
            if noise is not None:
                out.append(SeriesObservation(sid, period, v + float(noise[i]),
                                             first + timedelta(days=int(revision.delay_days)), frequency))
    return out


def simulate_observations(spec: DGPSpec, target_lag: int = 75, predictor_lag: int = 30,
                          revision: RevisionScheme | None = None):
    """Simulate and publish: returns (Simulation, observations)."""
    sim = simulate(spec)
    panel = sim.panel()
    lags = {sid: (target_lag if sid == TARGET else predictor_lag) for sid in panel}
    return sim, apply_publication_lags(panel, lags, revision)


def load_dgp_file(path) -> tuple[DGPSpec, dict]:
    """YAML with a ``dgp`` block and optional ``publication`` block (lags, revision)."""
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if "dgp" not in doc:
        raise ValidationError("simulation file needs a 'dgp' block")
    return DGPSpec.from_dict(doc["dgp"]), dict(doc.get("publication", {}))


def write_simulation(path, spec: DGPSpec, publication: Mapping | None = None) -> int:
    pub = dict(publication or {})
    rev = pub.get("revision")
    revision = RevisionScheme(**rev) if rev else None
    _, obs = simulate_observations(spec, pub.get("target_lag", 75), pub.get("predictor_lag", 30), revision)
    write_observation_csv(path, obs)
    return len(obs)
