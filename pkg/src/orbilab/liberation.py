"""Unitary Brownian motion at finite N, the liberation process and
finite-scale orbital dimension curves.

The SDE is ``dU = i U dH - U dt / 2`` with ``dH`` a Hermitian Brownian
increment normalized so that ``E tr_N(dH^2) = dt``.  Under this normalization
``E tr_N U(t) = exp(-t/2)`` for every N, which is the drift oracle used by
the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SDE_NORMALIZATION, TOL
from .errors import EigenSolverError, InvalidParameterError, StepSizeError
from .linalg import dagger, expi_hermitian_batch, polar_unitary, unitary_exp
from .microstates import MicrostateParams, estimate_orbital_measure
from .ncalg import Liberated, MatrixModel
from .sampling import RngStream, gue, gue_from_normals

__all__ = [
    "FubmPath",
    "FubmStats",
    "LiberationTrajectory",
    "DimensionCurve",
    "simulate_fubm",
    "fubm_stats",
    "fubm_moment_stats",
    "liberation_trajectory",
    "delta0orb_curve",
    "step_halving_check",
    "GENERATORS",
]

GENERATORS = ("fubm", "exp-sqrt-t")


@dataclass
class FubmPath:
    """Unitaries at the grid times; ``unitaries[k, c]`` is copy ``c`` at ``times[k]``."""

    N: int
    times: np.ndarray
    unitaries: np.ndarray
    step_size: float
    retraction: str = "polar"
    normalization: str = SDE_NORMALIZATION


def _grid(t_grid):
    t = np.asarray(sorted(set(float(x) for x in t_grid)), dtype=float)
    if t.size == 0 or t[0] < 0:
        raise InvalidParameterError("time grid must be non-empty and non-negative")
    if t[0] > 0:
        t = np.concatenate([[0.0], t])
    return t


def _step_counts(times, steps_per_unit):
    gaps = np.diff(times)
    counts = np.maximum(1, np.ceil(gaps * steps_per_unit - 1e-9).astype(int))
    return counts, gaps / counts


def _as_stream(rng):
    return rng if hasattr(rng, "substream") else RngStream(int(rng))


def _retract(x):
    try:
        return polar_unitary(x)
    except EigenSolverError as exc:
        raise StepSizeError(f"retraction failed: {exc}") from exc


def _advance(u, gens, n_steps, h, retraction, check_every=8):
    n = u.shape[-1]
    eye = np.eye(n)
    sq = math.sqrt(h)
    for step in range(n_steps):
        z = np.stack([g.standard_normal((n, n)) for g in gens])
        dh = sq * gue_from_normals(z)
        if retraction == "exp":
            u = u @ expi_hermitian_batch(dh)
        else:
            u = _retract(u @ ((1.0 - 0.5 * h) * eye + 1j * dh))
        if (step + 1) % check_every and step + 1 < n_steps:
            continue
        defect = float(np.max(np.abs(dagger(u) @ u - eye)))
        if not np.isfinite(defect) or defect > TOL.retraction_failure:
            raise StepSizeError(
                f"unitarity defect {defect:.3e} after retraction with step {h:.3e}; reduce the step size"
            )
        if defect > 1e-11:
            u = polar_unitary(u)
    return u


def simulate_fubm(N, t_grid, steps_per_unit=1000, n_copies=1, rng=0, retraction="polar", chunk=256):
    """Independent copies of unitary Brownian motion on ``U(N)`` sampled on a grid.

    Euler-Maruyama with a retraction each step: ``"polar"`` projects
    ``U (I + i dH - dt/2)`` to its unitary polar factor; ``"exp"`` uses
    ``U exp(i dH)``, whose Ito correction supplies the same ``-dt/2`` drift.
    Copy ``c`` draws its increments from ``rng.substream(c)`` so results do
    not depend on ``chunk``.

    Parameters
    ----------
    t_grid : sequence of float
        Output times; 0 is prepended if missing.
    steps_per_unit : int
        Integration steps per unit time, at least 100.
    """
    if N < 1:
        raise InvalidParameterError(f"N must be >= 1, got {N}")
    if steps_per_unit < 100:
        raise InvalidParameterError(f"need >= 100 steps per unit time, got {steps_per_unit}")
    if retraction not in ("polar", "exp"):
        raise InvalidParameterError(f"unknown retraction {retraction!r}")
    stream = _as_stream(rng)
    times = _grid(t_grid)
    counts, hs = _step_counts(times, steps_per_unit)
    out = np.empty((times.size, n_copies, N, N), dtype=complex)
    out[0] = np.eye(N)
    for start in range(0, n_copies, chunk):
        stop = min(start + chunk, n_copies)
        gens = [stream.substream(c).generator() for c in range(start, stop)]
        u = np.broadcast_to(np.eye(N, dtype=complex), (stop - start, N, N)).copy()
        for k in range(1, times.size):
            u = _advance(u, gens, int(counts[k - 1]), float(hs[k - 1]), retraction)
            out[k, start:stop] = u
    return FubmPath(N, times, out, 1.0 / steps_per_unit, retraction)


@dataclass
class FubmStats:
    times: np.ndarray
    mean_trace: np.ndarray
    mean_trace_se: np.ndarray
    norm_op: np.ndarray
    norm_op_se: np.ndarray
    norm_2: np.ndarray
    norm_2_se: np.ndarray
    hist_edges: np.ndarray
    histograms: np.ndarray
    max_abs_angle: np.ndarray
    n_copies: int
    unitarity_defect: float = 0.0


def _se(x, axis=0):
    n = x.shape[axis]
    return np.std(x, axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.full(np.mean(x, axis=axis).shape, np.nan)


def fubm_stats(path, bins=64):
    """Per-time aggregates across copies.

    ``mean_trace`` is complex ``E tr_N U``; ``norm_op`` and ``norm_2`` are the
    means of ``||U - 1||`` in operator and normalized 2-norm; histograms count
    eigenvalue arguments on ``[-pi, pi]``.
    """
    u = path.unitaries
    if u.size == 0:
        raise InvalidParameterError("empty path")
    T, C, N = u.shape[0], u.shape[1], path.N
    eye = np.eye(N)
    traces = np.trace(u, axis1=-2, axis2=-1) / N
    d = u - eye
    op = np.linalg.norm(d, ord=2, axis=(-2, -1))
    two = np.sqrt(np.sum(np.abs(d) ** 2, axis=(-2, -1)) / N)
    angles = np.angle(np.linalg.eigvals(u.reshape(-1, N, N))).reshape(T, C * N)
    edges = np.linspace(-np.pi, np.pi, bins + 1)
    hists = np.stack([np.histogram(a, bins=edges)[0] for a in angles])
    defect = float(np.max(np.linalg.norm(dagger(u) @ u - eye, ord=2, axis=(-2, -1))))
    return FubmStats(
        times=path.times,
        mean_trace=traces.mean(axis=1),
        mean_trace_se=np.abs(_se(traces.real, 1)) + 1j * np.abs(_se(traces.imag, 1)),
        norm_op=op.mean(axis=1),
        norm_op_se=_se(op, 1),
        norm_2=two.mean(axis=1),
        norm_2_se=_se(two, 1),
        hist_edges=edges,
        histograms=hists,
        max_abs_angle=np.max(np.abs(angles), axis=1),
        n_copies=C,
        unitarity_defect=defect,
    )


def fubm_moment_stats(N, t_grid, n_copies, rng=0, steps_per_unit=1000, retraction="polar", chunk=250):
    """Mean trace and its standard error without storing whole paths.

    Copies are simulated ``chunk`` at a time; only ``tr_N U`` and
    ``||U - 1||_op`` are kept.  Returns ``(times, mean, se, norm_op_mean)``.
    """
    stream = _as_stream(rng)
    times = _grid(t_grid)
    traces = np.empty((times.size, n_copies), dtype=complex)
    ops = np.empty((times.size, n_copies))
    for start in range(0, n_copies, chunk):
        stop = min(start + chunk, n_copies)
        sub = _SubStream(stream, start)
        p = simulate_fubm(N, times, steps_per_unit, stop - start, sub, retraction, chunk=stop - start)
        traces[:, start:stop] = np.trace(p.unitaries, axis1=-2, axis2=-1) / N
        ops[:, start:stop] = np.linalg.norm(p.unitaries - np.eye(N), ord=2, axis=(-2, -1))
    return times, traces.mean(axis=1), _se(traces.real, 1), ops.mean(axis=1)


@dataclass(frozen=True)
class _SubStream:
    # copy c of a chunk maps to copy offset + c of the parent stream
    parent: RngStream
    offset: int

    def substream(self, c):
        return self.parent.substream(self.offset + c)


def step_halving_check(N, t, n_copies, rng=0, steps_per_unit=1000, retraction="polar"):
    """Compare ``E tr_N U(t)`` at step ``h`` and ``h/2`` on the same copies' streams.

    Returns ``(value_h, value_h2, se)``; the guard passes when the two values
    differ by less than ``2 se``.
    """
    _, m1, se1, _ = fubm_moment_stats(N, [t], n_copies, rng, steps_per_unit, retraction)
    _, m2, se2, _ = fubm_moment_stats(N, [t], n_copies, rng, 2 * steps_per_unit, retraction)
    return complex(m1[-1]), complex(m2[-1]), float(max(se1[-1], se2[-1]))


@dataclass
class LiberationTrajectory:
    times: np.ndarray
    tuples: list
    unitaries: list


def liberation_trajectory(Xi, t_grid, rng=0, steps_per_unit=1000, retraction="polar"):
    """``(v_i(t) Xi_i v_i(t)^*)_i`` on a time grid, one independent path per family.

    Family ``i`` is driven by ``rng.substream(i)``.
    """
    stream = _as_stream(rng)
    fams = [f if isinstance(f, (list, tuple)) else [f] for f in Xi]
    N = np.asarray(fams[0][0]).shape[0]
    times = _grid(t_grid)
    paths = []
    for i, fam in enumerate(fams):
        for x in fam:
            if np.asarray(x).shape != (N, N):
                raise InvalidParameterError(f"family {i} has shape {np.asarray(x).shape}, expected {(N, N)}")
        p = simulate_fubm(N, times, steps_per_unit, 1, stream.substream(i), retraction)
        paths.append(p.unitaries[:, 0])
    tuples, unis = [], []
    for k in range(times.size):
        vs = [paths[i][k] for i in range(len(fams))]
        unis.append(vs)
        tuples.append([[v @ np.asarray(x) @ v.conj().T for x in fam] for v, fam in zip(vs, fams)])
    return LiberationTrajectory(times, tuples, unis)


@dataclass
class DimensionCurve:
    epsilons: np.ndarray
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    zero_hit: np.ndarray
    hit_fractions: np.ndarray
    generator: str
    estimates: list = field(default_factory=list, repr=False)


def _rotation(generator, N, eps, stream, steps_per_unit, retraction):
    if generator == "fubm":
        p = simulate_fubm(N, [eps], steps_per_unit, 1, stream, retraction)
        return p.unitaries[-1, 0]
    if generator == "exp-sqrt-t":
        return unitary_exp(math.sqrt(eps) * gue(N, stream.substream(0)))
    raise InvalidParameterError(f"unknown generator {generator!r}; expected one of {GENERATORS}")


def delta0orb_curve(target, Xi, params, eps_grid, n_samples, rng=0, generator="fubm",
                    steps_per_unit=1000, retraction="polar", workers=1):
    """Finite-scale orbital dimension curve.

    For each ``eps`` every family ``i`` gets a rotation ``V_i`` (unitary
    Brownian motion at time ``eps``, or ``exp(i sqrt(eps) H)`` with ``H`` from
    GUE).  The rotated references are ``V_i Xi_i V_i^*``; the target is the
    law of ``(v_i X_i v_i^*)_i`` together with the ``v_i``, each ``v_i``
    distributed like ``V_i`` and free from everything else.  A sampled
    ``(U_i)`` is a hit if ``(U_i V_i Xi_i V_i^* U_i^*, U_i V_i U_i^*)_i`` is a
    microstate for that target.  The value at ``eps`` is the per-N^2 log
    measure divided by ``|log eps^{1/2}|``.

    ``target`` is the joint law of the unrotated families.  A zero-hit point
    has value ``-inf`` and is flagged; its ``lower`` is ``-inf`` and ``upper``
    uses the rule-of-three bound.
    """
    eps = np.asarray(eps_grid, dtype=float)
    if eps.size == 0 or np.any(eps <= 0) or np.any(eps > 1):
        raise InvalidParameterError("eps_grid must lie in (0, 1]")
    if np.any(np.diff(eps) >= 0):
        raise InvalidParameterError("eps_grid must be strictly decreasing")
    stream = _as_stream(rng)
    n = len(Xi)
    fams = [f if isinstance(f, (list, tuple)) else [f] for f in Xi]
    p = params if isinstance(params, MicrostateParams) else MicrostateParams(**params)
    vals, los, his, flags, fracs, ests = [], [], [], [], [], []
    for k, e in enumerate(eps):
        V = [_rotation(generator, p.N, e, stream.substream(k, 1, i), steps_per_unit, retraction) for i in range(n)]
        rotated = [[v @ np.asarray(x) @ v.conj().T for x in fam] for v, fam in zip(V, fams)]
        laws = [MatrixModel([[v]], frozenset({(0, 0)})) for v in V]
        lib = Liberated(target, laws)

        def presence(U, V=V):
            return [u @ v @ u.conj().T for u, v in zip(U, V)]

        est = estimate_orbital_measure(lib, rotated, p, n_samples, stream.substream(k, 2), presence, workers)
        scale = abs(math.log(math.sqrt(e)))
        lo, hi = est.wilson_interval
        n2 = float(p.N) ** 2

        def scaled(x):
            if x == 0:
                return 0.0
            return x / scale if scale > 0 else math.copysign(math.inf, x)

        if est.zero_hits:
            v, l, h = -math.inf, -math.inf, scaled(est.log_upper_bound_per_N2)
        else:
            v = scaled(est.log_measure_per_N2)
            l = scaled(math.log(lo) / n2) if lo > 0 else -math.inf
            h = scaled(math.log(hi) / n2)
        vals.append(v)
        los.append(l)
        his.append(h)
        flags.append(est.zero_hits)
        fracs.append(est.hit_fraction)
        ests.append(est)
    return DimensionCurve(
        epsilons=eps,
        values=np.array(vals),
        lower=np.array(los),
        upper=np.array(his),
        zero_hit=np.array(flags),
        hit_fractions=np.array(fracs),
        generator=generator,
        estimates=ests,
    )
