"""Command-line entry point: ingest, simulate, backtest, nowcast, audit.

Exit codes: 0 success, 2 validation or data error, 3 release refused or
leakage found. Errors are also written to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import load_config
from .errors import NowcastError, ReleaseRefusedError
from .synthetic import load_dgp_file, write_simulation
from .vintage import ObservationLog, read_observation_csv, write_observation_csv
from .vintage.periods import parse_date

EXIT_OK, EXIT_INVALID, EXIT_REFUSED = 0, 2, 3
STORE_ENV = "NOWCAST_OBSERVATIONS"


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, default=str))


def _error(kind: str, exc: Exception, code: int) -> int:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    violations = getattr(exc, "violations", ())
    if violations:
        record["violations"] = [v.as_dict() for v in violations]
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    return code


def cmd_ingest(args) -> int:
    """Validate an observation file; with NOWCAST_OBSERVATIONS set, append accepted rows to that store."""
    records = read_observation_csv(args.data)
    store_path = os.environ.get(STORE_ENV)
    store = ObservationLog.from_csv(store_path) if store_path and Path(store_path).is_file() else ObservationLog()
    before = len(store)
    summary = store.ingest(records)
    out = summary.as_dict()
    if store_path:
        new = store.observations[before:]
        write_observation_csv(store_path, new, append=Path(store_path).is_file())
        out["store"] = store_path
        out["store_digest"] = store.digest()
    _emit(out)
    return EXIT_INVALID if summary.rejects else EXIT_OK


def cmd_simulate(args) -> int:
    spec, publication = load_dgp_file(args.spec)
    n = write_simulation(args.out, spec, publication)
    _emit({"observations": n, "out": args.out, "dgp": spec.to_dict()})
    return EXIT_OK


def cmd_backtest(args) -> int:
    from .pipeline import load_log, run_backtest

    cfg = load_config(args.config)
    res = run_backtest(cfg, load_log(cfg))
    _emit({"config_hash": cfg.config_hash, "files": res.files,
           "mcs_survivors": list(res.mcs.survivors) if res.mcs else None,
           "coverage": None if res.coverage is None else res.coverage.empirical})
    return EXIT_OK


def cmd_nowcast(args) -> int:
    from .pipeline import load_log, run_nowcast

    cfg = load_config(args.config)
    res = run_nowcast(cfg, load_log(cfg), parse_date(args.origin))
    _emit({"config_hash": cfg.config_hash, "point": res.package.point, "flags": dict(res.package.flags),
           "digest": res.package.digest(), "files": res.files})
    return EXIT_OK


def cmd_audit(args) -> int:
    from .pipeline import load_log, run_audit

    cfg = load_config(args.config)
    res = run_audit(cfg, load_log(cfg))
    _emit({"config_hash": cfg.config_hash, "clean": res.verdict.clean,
           "violations": [v.as_dict() for v in res.verdict.violations], "files": res.files})
    return EXIT_OK if res.verdict.clean else EXIT_REFUSED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nowcast", description="Real-time nowcasting workflow")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("ingest", help="validate an observation CSV (and append it to NOWCAST_OBSERVATIONS)")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_ingest)
    s = sub.add_parser("simulate", help="write a synthetic observation CSV from a DGP file")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("backtest", help="walk-forward evaluation, intervals, MCS and combination weights")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_backtest)
    s = sub.add_parser("nowcast", help="assemble the release package for one origin")
    s.add_argument("--config", required=True)
    s.add_argument("--origin", required=True)
    s.set_defaults(func=cmd_nowcast)
    s = sub.add_parser("audit", help="leakage audit and dashboard indicators")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ReleaseRefusedError as exc:
        return _error("release_refused", exc, EXIT_REFUSED)
    except (NowcastError, ValueError, OSError) as exc:
        return _error("invalid_input", exc, EXIT_INVALID)


if __name__ == "__main__":
    sys.exit(main())
