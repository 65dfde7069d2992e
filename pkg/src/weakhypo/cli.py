"""Command line entry point.

Exit codes: 0 all checks pass, 1 some check failed, 2 configuration error,
3 assumption violation, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from scipy import linalg

from .config import ENV_PREFIX, KINDS, ConfigError, ExperimentConfig
from .operators import GridTooCoarse
from .potentials import AssumptionViolation, SingularProfile
from .report import ExperimentReport, compare

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERICAL = 0, 1, 2, 3, 4

log = logging.getLogger("weakhypo")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="weakhypo", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run a {kind} experiment")
        s.add_argument("--config", help="JSON config (kind must match the subcommand)")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--threads", type=int)
    c = sub.add_parser("compare", help="diff two report.json files")
    c.add_argument("report_a")
    c.add_argument("report_b")
    return ap


def _env(name):
    return os.environ.get(ENV_PREFIX + name.upper())


def load_config(kind: str, args) -> ExperimentConfig:
    """Config file, then environment overrides, then flags."""
    path = args.config or _env("config")
    data = {"kind": kind}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("kind", kind) != kind:
            raise ConfigError(f"config kind {data.get('kind')!r} does not match subcommand {kind!r}")
        data.setdefault("kind", kind)
    for key, conv in (("seed", int), ("out", str), ("threads", int)):
        val = getattr(args, key)
        if val is None and _env(key) is not None:
            try:
                val = conv(_env(key))
            except ValueError:
                raise ConfigError(f"{ENV_PREFIX}{key.upper()} is not a valid {conv.__name__}") from None
        if val is not None:
            data[key] = val
    return ExperimentConfig.from_dict(data)


def _compare(args) -> int:
    a, b = ExperimentReport.load(args.report_a), ExperimentReport.load(args.report_b)
    drifts = compare(a, b)
    for d in drifts:
        print(f"{d.status:15s} {d.name}: {d.a!r} -> {d.b!r} (tol {d.tolerance})")
    bad = [d for d in drifts if d.status in ("drift", "missing")]
    print(f"{len(drifts)} difference(s), {len(bad)} beyond tolerance")
    return EXIT_FAIL if bad else EXIT_PASS


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "compare":
            return _compare(args)
        cfg = load_config(args.command, args)
    except (ConfigError, ValueError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    from .experiments import run

    try:
        rep = run(cfg)
    except (AssumptionViolation, SingularProfile, GridTooCoarse) as e:
        extra = f" (suggested R = {e.suggested_R:.6g})" if getattr(e, "suggested_R", None) else ""
        print(f"assumption violation: {e}{extra}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (FloatingPointError, linalg.LinAlgError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for r in rep.results:
        status = {True: "PASS", False: "FAIL", None: "    "}[r.passed]
        print(f"[{status}] {r.name} = {r.value}")
    summ = rep.summary()
    print(f"{summ['checks']} check(s), {summ['failed']} failed -> {cfg.out}/report.json")
    return EXIT_PASS if summ["pass"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
