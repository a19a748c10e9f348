"""Command-line runner: ``orbilab run | list | describe | reproduce``.

Exit codes: 0 success, 2 invalid parameters (JSON error record on stderr,
nothing written), 3 time budget exceeded (partial artifacts written with
``status: partial``).  The budget comes from ``ORBILAB_BUDGET_SECONDS``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .artifacts import header_fields, read_header, write_csv, write_json
from .config import DEFAULT_SEED
from .errors import BudgetExceededError, OrbilabError
from .experiments import REGISTRY, RunContext, describe, validate_params

EXIT_OK, EXIT_INVALID, EXIT_BUDGET = 0, 2, 3


def _error(kind, message, **extra):
    rec = {"error": kind, "message": message, **extra}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def _budget():
    raw = os.environ.get("ORBILAB_BUDGET_SECONDS")
    if raw in (None, ""):
        return None
    try:
        val = float(raw)
    except ValueError:
        return None
    return val if val > 0 else None


def _parse_override(text):
    key, sep, val = text.partition("=")
    if not sep:
        raise ValueError(f"--set expects key=value, got {text!r}")
    try:
        return key.strip(), tomllib.loads(f"v = {val}")["v"]
    except tomllib.TOMLDecodeError:
        return key.strip(), val


def _write(ctx, name, params, out, status):
    out.mkdir(parents=True, exist_ok=True)
    header = header_fields(name, params, ctx.seed, status)
    written = []
    for table, (cols, rows) in ctx.tables.items():
        written.append(write_csv(out / f"{table}.csv", header, cols, rows))
    for report, data in ctx.reports.items():
        written.append(write_json(out / f"{report}.json", header, data))
    return written


def execute(name, raw_params, seed=None, workers=1, out="results"):
    """Validate, run and write one experiment; return the exit code."""
    if name not in REGISTRY:
        _error("validation", f"unknown experiment {name!r}", fields={"experiment": "unknown"},
               known=sorted(REGISTRY))
        return EXIT_INVALID
    exp = REGISTRY[name]
    params, errors = validate_params(exp, raw_params)
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        errors["seed"] = "must be a non-negative integer"
    if workers < 1:
        errors["workers"] = "must be >= 1"
    if errors:
        _error("validation", "invalid parameters", experiment=name, fields=errors)
        return EXIT_INVALID
    ctx = RunContext(seed=DEFAULT_SEED if seed is None else seed, workers=workers, budget_seconds=_budget())
    try:
        exp.run(params, ctx)
    except BudgetExceededError as exc:
        files = _write(ctx, name, params, Path(out), "partial")
        _error("budget", str(exc), experiment=name, written=[str(f) for f in files])
        return EXIT_BUDGET
    except (OrbilabError, ValueError) as exc:
        _error("validation", str(exc), experiment=name, fields={})
        return EXIT_INVALID
    for f in _write(ctx, name, params, Path(out), "complete"):
        print(f)
    return EXIT_OK


def load_config(path):
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    unknown = set(doc) - {"experiment", "seed", "workers", "out", "params"}
    if unknown:
        raise ValueError(f"unknown top-level keys {sorted(unknown)}")
    if "experiment" not in doc:
        raise ValueError("config needs an 'experiment' key")
    return doc


def _cmd_run(args):
    try:
        doc = load_config(args.config)
        overrides = dict(_parse_override(s) for s in args.set or [])
    except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
        _error("validation", str(exc), fields={"config": str(exc)})
        return EXIT_INVALID
    params = {**doc.get("params", {}), **overrides}
    seed = args.seed if args.seed is not None else doc.get("seed")
    workers = args.workers if args.workers is not None else doc.get("workers", 1)
    out = args.out or doc.get("out", "results")
    return execute(doc["experiment"], params, seed, workers, out)


def _cmd_list(args):
    for name in sorted(REGISTRY):
        exp = REGISTRY[name]
        req = ", ".join(exp.required) or "-"
        print(f"{name}\t{exp.anchor}\trequired: {req}")
    return EXIT_OK


def _cmd_describe(args):
    if args.experiment not in REGISTRY:
        _error("validation", f"unknown experiment {args.experiment!r}", known=sorted(REGISTRY))
        return EXIT_INVALID
    print(describe(REGISTRY[args.experiment]))
    return EXIT_OK


def _cmd_reproduce(args):
    try:
        h = read_header(args.artifact)
    except (OSError, ValueError, KeyError) as exc:
        _error("validation", f"cannot read artifact header: {exc}")
        return EXIT_INVALID
    seed = h.get("seed")
    seed = int(seed) if seed is not None else None
    return execute(h["experiment"], h["params"], seed, args.workers or 1, args.out or "reproduced")


def build_parser():
    ap = argparse.ArgumentParser(prog="orbilab", description="Orbital free entropy experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a TOML config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--out")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a parameter")
    r.set_defaults(func=_cmd_run)

    ls = sub.add_parser("list", help="list experiments")
    ls.set_defaults(func=_cmd_list)

    d = sub.add_parser("describe", help="show an experiment's parameters")
    d.add_argument("experiment")
    d.set_defaults(func=_cmd_describe)

    rp = sub.add_parser("reproduce", help="rerun the experiment recorded in an artifact header")
    rp.add_argument("artifact")
    rp.add_argument("--workers", type=int)
    rp.add_argument("--out")
    rp.set_defaults(func=_cmd_reproduce)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
