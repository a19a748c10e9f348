"""Named experiments for the command-line runner.

Each experiment declares typed parameters (validated before any work) and a
``run(params, ctx)`` that appends rows to ``ctx`` tables or reports.  The
runner owns file output, so a budget overrun still leaves partial results.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .classical import JointDistribution, h_sym_exact, h_sym_mc, mutual_information
from .dimension import (
    HyperfiniteProfile,
    PointCloud,
    check_kp_sandwich,
    cyclic_group,
    delta0_compose,
    delta0_hyperfinite,
    homogeneous_covering_bound,
    subgroups,
)
from .errors import BudgetExceededError
from .liberation import GENERATORS, delta0orb_curve, fubm_moment_stats
from .microstates import ESTIMATE_COLUMNS, MicrostateParams, estimate_orbital_measure, reference_tuple
from .ncalg import FreeProduct, Identical, Projection, Semicircular, mf_free_deviation, spec_from_json
from .sampling import RngStream, check_factorization, haar_unitary_batch, gue
from .transport import conjugation_lipschitz_check, metric_comparison, talagrand_check

__all__ = ["REGISTRY", "Experiment", "Param", "RunContext", "validate_params", "build_target"]

REQUIRED = object()


@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    default: object = REQUIRED
    check: object = None
    doc: str = ""

    @property
    def required(self):
        return self.default is REQUIRED


def _coerce(kind, value):
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"expected a number, got {value!r}")
        return float(value)
    if kind == "float?":
        return None if value is None or value == "none" else _coerce("float", value)
    if kind == "str":
        if not isinstance(value, str):
            raise ValueError(f"expected a string, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ValueError(f"expected true/false, got {value!r}")
        return value
    if kind.startswith("list["):
        inner = kind[5:-1]
        if not isinstance(value, (list, tuple)) or not value:
            raise ValueError(f"expected a non-empty list, got {value!r}")
        return [_coerce(inner, v) for v in value]
    if kind == "matrix":
        arr = np.asarray(value, dtype=float)
        if arr.ndim != 2:
            raise ValueError("expected a 2-d array")
        return arr.tolist()
    if kind == "any":
        return value
    raise ValueError(f"unknown kind {kind}")


def validate_params(exp, raw):
    """Return ``(params, errors)``; ``errors`` maps field name to message."""
    errors = {}
    out = {}
    known = {p.name for p in exp.params}
    for k in raw:
        if k not in known:
            errors[k] = "unknown parameter"
    for p in exp.params:
        if p.name not in raw:
            if p.required:
                errors[p.name] = "required"
            else:
                out[p.name] = p.default
            continue
        try:
            v = _coerce(p.kind, raw[p.name])
            if p.check is not None:
                msg = p.check(v)
                if msg:
                    raise ValueError(msg)
            out[p.name] = v
        except ValueError as exc:
            errors[p.name] = str(exc)
    return out, errors


def _positive(v):
    vals = v if isinstance(v, list) else [v]
    return None if all(x > 0 for x in vals) else "must be > 0"


def _at_least(n):
    def check(v):
        vals = v if isinstance(v, list) else [v]
        return None if all(x >= n for x in vals) else f"must be >= {n}"
    return check


def _unit_interval(v):
    vals = v if isinstance(v, list) else [v]
    return None if all(0 < x <= 1 for x in vals) else "must lie in (0, 1]"


def _one_of(*opts):
    def check(v):
        vals = v if isinstance(v, list) else [v]
        return None if all(x in opts for x in vals) else f"must be one of {list(opts)}"
    return check


@dataclass
class RunContext:
    seed: int
    workers: int = 1
    budget_seconds: float | None = None
    tables: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    started: float = field(default_factory=time.monotonic)

    @property
    def stream(self):
        return RngStream(self.seed)

    def table(self, name, columns):
        if name not in self.tables:
            self.tables[name] = (list(columns), [])
        return self.tables[name][1]

    def check_budget(self):
        if self.budget_seconds is not None and time.monotonic() - self.started > self.budget_seconds:
            raise BudgetExceededError(f"budget of {self.budget_seconds} s exceeded")


@dataclass(frozen=True)
class Experiment:
    name: str
    anchor: str
    params: tuple
    run: object
    description: str = ""

    @property
    def required(self):
        return [p.name for p in self.params if p.required]


TARGETS = ("free-projections", "identical-projections", "free-semicirculars", "json")


def build_target(params):
    kind = params["target"]
    n = params.get("n_families", 2)
    alpha = params.get("alpha", 0.5)
    if kind == "free-projections":
        return FreeProduct([Projection(alpha) for _ in range(n)])
    if kind == "identical-projections":
        return Identical(Projection(alpha), n)
    if kind == "free-semicirculars":
        return FreeProduct([Semicircular() for _ in range(n)])
    if kind == "json":
        return spec_from_json(params["target_json"])
    raise ValueError(f"unknown target {kind}")


TARGET_PARAMS = (
    Param("target", "str", "free-projections", _one_of(*TARGETS), "target law"),
    Param("n_families", "int", 2, _at_least(1)),
    Param("alpha", "float", 0.5, lambda v: None if 0 <= v <= 1 else "must lie in [0, 1]"),
    Param("target_json", "any", None, None, "tracial-spec/1 document when target = json"),
)


# --- runners -------------------------------------------------------------------

def _run_orbital(p, ctx):
    target = build_target(p)
    rows = ctx.table("orbital-measure", ESTIMATE_COLUMNS)
    for k, N in enumerate(p["N"]):
        ctx.check_budget()
        mp = MicrostateParams(N, p["m"], p["delta"], p["R"])
        Xi = reference_tuple(target, N)
        est = estimate_orbital_measure(target, Xi, mp, p["n_samples"], ctx.stream.substream(k), workers=ctx.workers)
        row = est.row()
        row["seed"] = ctx.seed
        rows.append(row)


def _run_freeness(p, ctx):
    rows = ctx.table("asymptotic-freeness", ("trial", "deviation", "m", "N", "seed"))
    N = p["N"]
    d = np.ones(N)
    d[N // 2:] = -1.0
    for t in range(p["trials"]):
        ctx.check_budget()
        U = haar_unitary_batch(N, 2, "U", ctx.stream.substream(t))
        fams = [[(u * d) @ u.conj().T] for u in U]
        rows.append({"trial": t, "deviation": mf_free_deviation(fams, p["m"]), "m": p["m"], "N": N, "seed": ctx.seed})


def _run_hsym(p, ctx):
    joint = JointDistribution(p["support_x"], p["support_y"], p["probs"])
    mi = mutual_information(joint)
    rows = ctx.table("hsym-mi", ("N", "method", "value", "se", "mutual_information", "deficit", "seed"))
    for N in p["N_list"]:
        ctx.check_budget()
        v = h_sym_exact(joint, N, p["delta"])
        rows.append({"N": N, "method": "exact", "value": v, "se": 0.0, "mutual_information": mi,
                     "deficit": v + mi, "seed": ctx.seed})
    if p["mc_samples"]:
        ctx.check_budget()
        e = h_sym_mc(joint, p["mc_N"], p["mc_m"], p["mc_delta"], p["mc_samples"], ctx.stream.substream(0))
        rows.append({"N": p["mc_N"], "method": "monte-carlo", "value": e.value, "se": e.se,
                     "mutual_information": mi, "deficit": e.value + mi, "seed": ctx.seed})


def _run_curve(p, ctx):
    target = build_target(p)
    mp = MicrostateParams(p["N"], p["m"], p["delta"], None)
    Xi = reference_tuple(target, p["N"])
    cols = ("generator", "eps", "value", "lower", "upper", "zero_hit", "hit_fraction", "n_samples", "seed")
    rows = ctx.table("delta0orb-curve", cols)
    summary = {"thresholds": {"free_abs_below": p["threshold_free"], "identical_at_most": p["threshold_identical"]},
               "expect": p["expect"], "generators": {}}
    ctx.reports["delta0orb-curve-summary"] = summary
    for g_idx, gen in enumerate(p["generators"]):
        ctx.check_budget()
        curve = delta0orb_curve(target, Xi, mp, p["eps_grid"], p["n_samples"], ctx.stream.substream(g_idx),
                                gen, p["steps_per_unit"], p["retraction"], workers=ctx.workers)
        for k, e in enumerate(curve.epsilons):
            rows.append({"generator": gen, "eps": float(e), "value": float(curve.values[k]),
                         "lower": float(curve.lower[k]), "upper": float(curve.upper[k]),
                         "zero_hit": bool(curve.zero_hit[k]), "hit_fraction": float(curve.hit_fractions[k]),
                         "n_samples": p["n_samples"], "seed": ctx.seed})
        if p["expect"] == "free":
            ok = bool(np.all(np.abs(curve.values) < p["threshold_free"]))
        elif p["expect"] == "identical":
            ok = bool(np.all(curve.values <= p["threshold_identical"]))
        else:
            ok = None
        summary["generators"][gen] = {"values": curve.values.tolist(), "zero_hit": curve.zero_hit.tolist(),
                                      "passes_threshold": ok}


def _run_factorization(p, ctx):
    rep = check_factorization(p["N"], p["samples"], ctx.stream)
    ctx.reports["factorization"] = {
        "N": p["N"], "samples": rep.sample_count,
        "vandermonde_gof_pvalue": rep.vandermonde_gof_pvalue, "chi2_statistic": rep.chi2_statistic,
        "eigenvector_invariance_pvalue": rep.eigenvector_invariance_pvalue, "ks_statistic": rep.ks_statistic,
    }


def _run_fubm(p, ctx):
    times, mean, se, op = fubm_moment_stats(p["N"], p["times"], p["copies"], ctx.stream,
                                            p["steps_per_unit"], p["retraction"])
    rows = ctx.table("fubm-stats", ("t", "mean_trace_re", "mean_trace_im", "se_re", "exp_minus_t_over_2",
                                    "z_score", "norm_op_mean", "steps_per_unit", "retraction", "seed"))
    for k, t in enumerate(times):
        target = math.exp(-t / 2)
        z = (mean[k].real - target) / se[k] if se[k] > 0 else 0.0
        rows.append({"t": float(t), "mean_trace_re": float(mean[k].real), "mean_trace_im": float(mean[k].imag),
                     "se_re": float(se[k]), "exp_minus_t_over_2": target, "z_score": float(z),
                     "norm_op_mean": float(op[k]), "steps_per_unit": p["steps_per_unit"],
                     "retraction": p["retraction"], "seed": ctx.seed})


def _run_sandwich(p, ctx):
    rows = ctx.table("kp-sandwich", ("cloud", "points", "eps", "P_eps", "K_2eps", "P_4eps", "holds"))
    for c in range(p["clouds"]):
        ctx.check_budget()
        gen = ctx.stream.substream(c).generator()
        n = int(gen.integers(2, p["max_points"] + 1))
        cloud = PointCloud.from_points(gen.random((n, 2)))
        med = float(np.median(cloud.dist[np.triu_indices(n, 1)]))
        for f in p["eps_factors"]:
            r = check_kp_sandwich(cloud, med * f)
            rows.append({"cloud": c, "points": n, "eps": med * f, "P_eps": r.P_eps, "K_2eps": r.K_2eps,
                         "P_4eps": r.P_4eps, "holds": r.holds})


def _run_homogeneous(p, ctx):
    rows = ctx.table("homogeneous-bound", ("n", "subgroup", "eps", "K_eps_Gamma", "K_eps_H", "P_2eps_quotient", "holds"))
    for n in range(1, p["max_order"] + 1):
        ctx.check_budget()
        G = cyclic_group(n)
        for H in subgroups(G):
            for e in p["eps"]:
                r = homogeneous_covering_bound(G, H, range(n), e)
                rows.append({"n": n, "subgroup": " ".join(map(str, H)), "eps": e, "K_eps_Gamma": r.K_eps_Gamma,
                             "K_eps_H": r.K_eps_H, "P_2eps_quotient": r.P_2eps_quotient, "holds": r.holds})


def _profile(doc):
    return HyperfiniteProfile(Fraction(str(doc.get("diffuse_weight", 0))),
                              tuple((int(m), Fraction(str(w))) for m, w in doc.get("atoms", [])),
                              doc.get("residual_size"))


def _run_compose(p, ctx):
    profiles = [_profile(d) for d in p["profiles"]]
    comp = delta0_compose(profiles, p["relation"])
    ctx.reports["delta0-compose"] = {
        "delta0": [delta0_hyperfinite(x) for x in profiles],
        "relation": p["relation"],
        "delta0_orb": comp.delta0_orb,
        "delta0_join": comp.delta0_join,
    }


def _run_talagrand(p, ctx):
    out = {}
    for k, r in enumerate(p["restrictions"]):
        ctx.check_budget()
        rep = talagrand_check(p["N"], r, p["samples"], ctx.stream.substream(k))
        out[r] = {"gamma_mass_est": rep.gamma_mass_est, "mass_interval": list(rep.mass_interval), "S": rep.S,
                  "W2_est": rep.W2_est, "bound": rep.bound, "allowance": rep.allowance,
                  "holds_within_ci": rep.holds_within_ci, "samples": rep.samples}
    ctx.reports["talagrand"] = out


def _run_transport_checks(p, ctx):
    rows = ctx.table("transport-checks", ("check", "trials", "N", "failures", "max_ratio"))
    gen = ctx.stream.substream(0).generator()
    fails, worst = 0, 0.0
    for _ in range(p["trials"]):
        xi = gue(p["N"], gen)
        U, V = haar_unitary_batch(p["N"], 2, "U", gen)
        r = conjugation_lipschitz_check(xi, U, V)
        fails += not r.holds
        worst = max(worst, r.lhs / r.rhs if r.rhs > 0 else 0.0)
    rows.append({"check": "conjugation-lipschitz", "trials": p["trials"], "N": p["N"], "failures": fails,
                 "max_ratio": worst})
    ctx.check_budget()
    gen = ctx.stream.substream(1).generator()
    fails, worst = 0, 0.0
    for _ in range(p["trials"]):
        U, V = haar_unitary_batch(p["N"], 2, "U", gen)
        r = metric_comparison([U], [V])
        fails += not r.ordered
        worst = max(worst, r.d_HS / r.d_geod_upper if r.d_geod_upper > 0 else 0.0)
    rows.append({"check": "hs-vs-geodesic", "trials": p["trials"], "N": p["N"], "failures": fails,
                 "max_ratio": worst})


REGISTRY = {e.name: e for e in [
    Experiment(
        "orbital-measure",
        "orbital free entropy: Haar measure of orbital microstate sets",
        TARGET_PARAMS + (
            Param("N", "list[int]", REQUIRED, _at_least(1)),
            Param("m", "int", 4, _at_least(1)),
            Param("delta", "float", 0.1, _positive),
            Param("R", "float?", None),
            Param("n_samples", "int", 500, _at_least(100)),
        ),
        _run_orbital,
        "Hit-or-miss estimate of the orbital microstate measure per N.",
    ),
    Experiment(
        "asymptotic-freeness",
        "asymptotic freeness: (m, eps)-freeness of Haar-rotated families",
        (
            Param("N", "int", REQUIRED, _at_least(2)),
            Param("m", "int", 4, _at_least(1)),
            Param("trials", "int", 100, _at_least(1)),
        ),
        _run_freeness,
        "mf_free_deviation of two independently rotated diag(+1, -1) families.",
    ),
    Experiment(
        "hsym-mi",
        "classical permutation microstates: I(X;Y) = -H_sym(X,Y)",
        (
            Param("probs", "matrix", [[0.5, 0.0], [0.0, 0.5]]),
            Param("support_x", "list[float]", [0.0, 1.0]),
            Param("support_y", "list[float]", [0.0, 1.0]),
            Param("N_list", "list[int]", [4, 8, 12, 16], _at_least(1)),
            Param("delta", "float", 0.0, lambda v: None if v >= 0 else "must be >= 0"),
            Param("mc_N", "int", 8, _at_least(1)),
            Param("mc_m", "int", 2, _at_least(1)),
            Param("mc_delta", "float", 1e-9, _positive),
            Param("mc_samples", "int", 100000, lambda v: None if v == 0 or v >= 1000 else "must be 0 or >= 1000"),
        ),
        _run_hsym,
        "Exact and Monte Carlo H_sym against the mutual information.",
    ),
    Experiment(
        "delta0orb-curve",
        "modified orbital free entropy dimension via liberation",
        TARGET_PARAMS + (
            Param("N", "int", 100, _at_least(1)),
            Param("m", "int", 3, _at_least(1)),
            Param("delta", "float", 0.1, _positive),
            Param("eps_grid", "list[float]", [0.5, 0.25, 0.1, 0.05], _unit_interval),
            Param("n_samples", "int", 200, _at_least(100)),
            Param("generators", "list[str]", list(GENERATORS), _one_of(*GENERATORS)),
            Param("steps_per_unit", "int", 1000, _at_least(100)),
            Param("retraction", "str", "polar", _one_of("polar", "exp")),
            Param("threshold_free", "float", 0.2, _positive),
            Param("threshold_identical", "float", -0.2),
            Param("expect", "str", "none", _one_of("free", "identical", "none")),
        ),
        _run_curve,
        "Per-eps orbital measure in the presence of the rotation unitaries, scaled by |log eps^(1/2)|.",
    ),
    Experiment(
        "factorization",
        "eigen-factorization of GUE: Vandermonde density and Haar eigenvectors",
        (
            Param("N", "int", 2, _at_least(1)),
            Param("samples", "int", 100000, _at_least(1000)),
        ),
        _run_factorization,
    ),
    Experiment(
        "fubm-stats",
        "free unitary Brownian motion: drift identity and square-root growth",
        (
            Param("N", "int", 64, _at_least(1)),
            Param("times", "list[float]", [0.25, 0.5, 1.0], lambda v: None if all(t >= 0 for t in v) else "must be >= 0"),
            Param("copies", "int", 200, _at_least(2)),
            Param("steps_per_unit", "int", 1000, _at_least(100)),
            Param("retraction", "str", "polar", _one_of("polar", "exp")),
        ),
        _run_fubm,
    ),
    Experiment(
        "kp-sandwich",
        "covering and packing numbers: P_eps >= K_2eps >= P_4eps",
        (
            Param("clouds", "int", 100, _at_least(1)),
            Param("max_points", "int", 64, lambda v: None if 2 <= v <= 64 else "must lie in [2, 64]"),
            Param("eps_factors", "list[float]", [0.05, 0.1, 0.2, 0.35, 0.5], _positive),
        ),
        _run_sandwich,
    ),
    Experiment(
        "homogeneous-bound",
        "covering numbers in homogeneous spaces: K_eps(Gamma) >= K_eps(H) P_2eps(pi(Gamma))",
        (
            Param("max_order", "int", 12, _at_least(1)),
            Param("eps", "list[float]", [0.4, 0.9, 1.4], _positive),
        ),
        _run_homogeneous,
    ),
    Experiment(
        "delta0-compose",
        "free entropy dimension of hyperfinite families and its orbital decomposition",
        (
            Param("profiles", "any", REQUIRED, lambda v: None if isinstance(v, list) and v else "non-empty list of profiles"),
            Param("relation", "str", "free"),
        ),
        _run_compose,
    ),
    Experiment(
        "talagrand",
        "transport-entropy inequality on SU(N) with Ricci curvature N/2",
        (
            Param("N", "int", 2, _at_least(2)),
            Param("samples", "int", 400, _at_least(200)),
            Param("restrictions", "list[str]", ["all", "re-trace-nonneg", "quadrant"],
                  _one_of("all", "re-trace-nonneg", "quadrant")),
        ),
        _run_talagrand,
    ),
    Experiment(
        "transport-checks",
        "conjugation Lipschitz bound and Hilbert-Schmidt vs geodesic distance",
        (
            Param("N", "int", 4, _at_least(1)),
            Param("trials", "int", 1000, _at_least(1)),
        ),
        _run_transport_checks,
    ),
]}


def describe(exp):
    lines = [f"{exp.name}: {exp.anchor}"]
    if exp.description:
        lines.append(f"  {exp.description}")
    for p in exp.params:
        dflt = "required" if p.required else f"default {json.dumps(p.default)}"
        lines.append(f"  {p.name} ({p.kind}, {dflt}){' - ' + p.doc if p.doc else ''}")
    return "\n".join(lines)
