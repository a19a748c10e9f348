"""Run every config in configs/ through the CLI runner.

Usage: python3 scripts/run_all.py [--workers W] [--only NAME ...]
"""
import argparse
import sys
from pathlib import Path

from orbilab.cli import main

ROOT = Path(__file__).resolve().parent.parent


def run():
    ap = argparse.ArgumentParser()
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="config stems to run")
    ap.add_argument("--out", default=str(ROOT / "results"))
    args = ap.parse_args()
    failed = []
    for cfg in sorted((ROOT / "configs").glob("*.toml")):
        if args.only and cfg.stem not in args.only:
            continue
        print(f"== {cfg.stem}", flush=True)
        code = main(["run", "--config", str(cfg), "--workers", str(args.workers),
                     "--out", str(Path(args.out) / cfg.stem)])
        if code:
            failed.append((cfg.stem, code))
    for name, code in failed:
        print(f"{name}: exit {code}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(run())
