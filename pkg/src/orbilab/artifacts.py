"""Self-describing CSV and JSON artifacts.

Every artifact starts with a header recording the tool version, experiment
name, full parameter echo, seed and the matrix/SDE normalizations.  There are
no timestamps, so identical runs produce identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from . import __version__
from .config import GUE_NORMALIZATION, SDE_NORMALIZATION

__all__ = ["header_fields", "write_csv", "write_json", "read_header", "fmt"]


def fmt(x):
    """Stable text form for CSV cells."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "-inf" if x < 0 else "inf"
        return repr(x)
    if isinstance(x, complex):
        return f"{fmt(x.real)}{'+' if x.imag >= 0 else '-'}{fmt(abs(x.imag))}j"
    if x is None:
        return ""
    if hasattr(x, "item"):
        return fmt(x.item())
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):
        return _jsonable(x.item())
    if hasattr(x, "tolist"):
        return _jsonable(x.tolist())
    if isinstance(x, float) and not math.isfinite(x):
        return fmt(x)
    if isinstance(x, complex):
        return {"re": _jsonable(x.real), "im": _jsonable(x.imag)}
    if hasattr(x, "numerator") and hasattr(x, "denominator") and not isinstance(x, (int, float)):
        return str(x)
    return x


def header_fields(experiment, params, seed, status="complete"):
    return {
        "orbilab_version": __version__,
        "experiment": experiment,
        "params": _jsonable(params),
        "seed": seed,
        "gue_normalization": GUE_NORMALIZATION,
        "sde_normalization": SDE_NORMALIZATION,
        "status": status,
    }


def _header_lines(header):
    out = []
    for k, v in header.items():
        text = json.dumps(v, sort_keys=True) if k == "params" else str(v)
        out.append(f"# {k}: {text}")
    return out


def write_csv(path, header, columns, rows):
    buf = io.StringIO()
    for line in _header_lines(header):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) if isinstance(r, dict) else fmt(v) for c, v in zip(columns, r if not isinstance(r, dict) else columns)])
    Path(path).write_text(buf.getvalue())
    return Path(path)


def write_json(path, header, data):
    doc = {"header": header, "data": _jsonable(data)}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return Path(path)


def read_header(path):
    """Recover the header dict of a CSV or JSON artifact."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return json.loads(text)["header"]
    header = {}
    for line in text.splitlines():
        if not line.startswith("# "):
            break
        key, _, val = line[2:].partition(": ")
        header[key] = json.loads(val) if key in ("params", "seed") else val
    return header
