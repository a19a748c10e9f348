"""Run the pre-registered dimension-curve benchmarks and report the verdicts.

The thresholds live in configs/benchmark_free.toml and
configs/benchmark_identical.toml and are not touched here.
"""
import json
import sys
from pathlib import Path

from orbilab.cli import main

ROOT = Path(__file__).resolve().parent.parent


def run(out=ROOT / "results"):
    verdicts = []
    for name in ("benchmark_free", "benchmark_identical"):
        target = Path(out) / name
        code = main(["run", "--config", str(ROOT / "configs" / f"{name}.toml"), "--out", str(target)])
        if code:
            return code
        summary = json.loads((target / "delta0orb-curve-summary.json").read_text())["data"]
        for gen, res in summary["generators"].items():
            verdicts.append(res["passes_threshold"])
            print(f"{name} [{gen}]: values={res['values']} pass={res['passes_threshold']}")
    return 0 if all(verdicts) else 1


if __name__ == "__main__":
    sys.exit(run())
