"""Discrete optimal transport and finite-N checks of the transport chain.

Exact W2 solves the transportation linear program (Hungarian assignment for
uniform clouds of equal size, HiGHS otherwise).  The entropic solver is a
log-domain Sinkhorn whose value comes with a primal-dual gap.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .config import TOL
from .errors import InvalidParameterError
from .microstates import wilson_interval
from .sampling import RngStream, haar_unitary_batch

__all__ = [
    "DiscreteMeasure",
    "TransportPlan",
    "wasserstein2",
    "brute_force_w2",
    "hs_cost",
    "conjugation_lipschitz_check",
    "relative_entropy_restricted",
    "talagrand_check",
    "metric_comparison",
    "RESTRICTIONS",
    "measure_from_csv",
    "cost_from_csv",
]

EXACT_ATOM_LIMIT = 500


@dataclass(frozen=True)
class DiscreteMeasure:
    atoms: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.atoms):
            raise InvalidParameterError(f"{len(self.atoms)} atoms but weights of shape {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > TOL.measure_weights * max(1, len(w)):
            raise InvalidParameterError(f"weights must be non-negative and sum to 1 (sum={w.sum():.15g})")
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, atoms):
        atoms = list(atoms)
        return cls(tuple(range(len(atoms))) if not atoms else tuple(atoms), np.full(len(atoms), 1.0 / len(atoms)))

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class TransportPlan:
    coupling: np.ndarray
    cost: float
    gap: float = 0.0
    converged: bool = True
    method: str = "exact"


def _check(mu, nu, cost):
    a = mu.weights if isinstance(mu, DiscreteMeasure) else np.asarray(mu, dtype=float)
    b = nu.weights if isinstance(nu, DiscreteMeasure) else np.asarray(nu, dtype=float)
    C = np.asarray(cost, dtype=float)
    if C.shape != (len(a), len(b)):
        raise InvalidParameterError(f"cost shape {C.shape} does not match {len(a)}x{len(b)} atoms")
    for name, w in (("source", a), ("target", b)):
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidParameterError(f"{name} weights are not a probability vector")
    return a, b, C


def _exact(a, b, C):
    n, m = C.shape
    if n == m and np.allclose(a, 1.0 / n, rtol=0, atol=1e-15) and np.allclose(b, 1.0 / m, rtol=0, atol=1e-15):
        r, c = linear_sum_assignment(C)
        P = np.zeros_like(C)
        P[r, c] = 1.0 / n
        return P
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    A = sparse.vstack([rows, cols]).tocsr()
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise InvalidParameterError(f"transport LP failed: {res.message}")
    P = np.maximum(res.x.reshape(n, m), 0.0)
    return P


def _round_plan(P, a, b):
    # Altschuler-Weed-Rigollet rounding onto the exact marginals
    x = np.minimum(a / np.maximum(P.sum(1), 1e-300), 1.0)
    P = P * x[:, None]
    y = np.minimum(b / np.maximum(P.sum(0), 1e-300), 1.0)
    P = P * y[None, :]
    ea = a - P.sum(1)
    eb = b - P.sum(0)
    if ea.sum() > 0:
        P = P + np.outer(ea, eb) / ea.sum()
    return P


def _sinkhorn(a, b, C, reg, max_iter, tol):
    la = np.log(np.where(a > 0, a, 1e-300))
    lb = np.log(np.where(b > 0, b, 1e-300))
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    converged = False
    for it in range(max_iter):
        f = reg * (la - logsumexp((g[None, :] - C) / reg, axis=1))
        g = reg * (lb - logsumexp((f[:, None] - C) / reg, axis=0))
        if it % 10 == 9 or it == max_iter - 1:
            P = np.exp((f[:, None] + g[None, :] - C) / reg)
            err = np.abs(P.sum(1) - a).sum()
            if err < tol:
                converged = True
                break
    P = np.exp((f[:, None] + g[None, :] - C) / reg)
    P = _round_plan(P, a, b)
    primal = float(np.sum(P * C))
    # c-transform makes the potentials dual feasible
    g = np.min(C - f[:, None], axis=0)
    f = np.min(C - g[None, :], axis=1)
    dual = float(a @ f + b @ g)
    return P, primal, max(primal - dual, 0.0), converged


def wasserstein2(mu, nu, cost, method="exact", reg=None, max_iter=20000, tol=1e-9):
    """2-Wasserstein distance for a squared-distance cost matrix.

    Parameters
    ----------
    mu, nu : DiscreteMeasure or weight vectors
    cost : (n, m) array
        Squared distances between atoms.
    method : {"exact", "entropic"}
        ``entropic`` regularizes with ``reg`` (default 1e-2 of the median
        cost) and reports the primal-dual gap of the squared cost.

    Returns
    -------
    distance : float
        ``sqrt`` of the plan cost (upper bound for entropic).
    plan : TransportPlan
    """
    a, b, C = _check(mu, nu, cost)
    if method == "exact":
        if max(C.shape) > EXACT_ATOM_LIMIT:
            raise InvalidParameterError(f"exact method limited to {EXACT_ATOM_LIMIT} atoms per side")
        P = _exact(a, b, C)
        val = float(np.sum(P * C))
        return math.sqrt(max(val, 0.0)), TransportPlan(P, val)
    if method == "entropic":
        if reg is None:
            med = float(np.median(C))
            reg = 1e-2 * med if med > 0 else 1e-2
        P, primal, gap, conv = _sinkhorn(a, b, C, reg, max_iter, tol)
        return math.sqrt(max(primal, 0.0)), TransportPlan(P, primal, gap, conv, "entropic")
    raise InvalidParameterError(f"unknown method {method!r}")


def brute_force_w2(a, b, cost):
    """Exact W2 by enumerating permutations of unit masses.

    ``a`` and ``b`` are rational weights (``Fraction`` or strings) with a
    small common denominator ``D``; each atom is split into ``D * w`` unit
    masses and all ``D!`` assignments are tried.  Integral vertices of the
    transportation polytope make this exact.
    """
    a = [Fraction(x) for x in a]
    b = [Fraction(x) for x in b]
    D = math.lcm(*(x.denominator for x in a + b))
    if D > 8:
        raise InvalidParameterError(f"common denominator {D} too large for enumeration")
    left = [i for i, w in enumerate(a) for _ in range(int(w * D))]
    right = [j for j, w in enumerate(b) for _ in range(int(w * D))]
    C = np.asarray(cost, dtype=float)
    best = math.inf
    for perm in itertools.permutations(range(D)):
        best = min(best, sum(C[left[k], right[perm[k]]] for k in range(D)) / D)
    return math.sqrt(best)


def hs_cost(X, Y):
    """Squared Hilbert-Schmidt distances between two stacks of matrices."""
    X = np.asarray(X).reshape(len(X), -1)
    Y = np.asarray(Y).reshape(len(Y), -1)
    xx = np.sum(np.abs(X) ** 2, axis=1)
    yy = np.sum(np.abs(Y) ** 2, axis=1)
    C = xx[:, None] + yy[None, :] - 2.0 * np.real(X @ Y.conj().T)
    return np.maximum(C, 0.0)


@dataclass(frozen=True)
class LipschitzReport:
    lhs: float
    rhs: float
    holds: bool


def conjugation_lipschitz_check(xi, U, V):
    """``||U xi U^* - V xi V^*||_HS <= 2 ||xi||_op ||U - V||_HS``."""
    xi, U, V = (np.asarray(x) for x in (xi, U, V))
    if not xi.shape == U.shape == V.shape:
        raise InvalidParameterError(f"shapes differ: {xi.shape}, {U.shape}, {V.shape}")
    lhs = float(np.linalg.norm(U @ xi @ U.conj().T - V @ xi @ V.conj().T))
    rhs = 2.0 * float(np.linalg.norm(xi, 2)) * float(np.linalg.norm(U - V))
    return LipschitzReport(lhs, rhs, lhs <= rhs + 1e-9)


def relative_entropy_restricted(gamma_mass):
    """Relative entropy of a normalized restriction w.r.t. the full measure: ``-log mass``."""
    if not 0 < gamma_mass <= 1:
        raise InvalidParameterError(f"mass must lie in (0, 1], got {gamma_mass}")
    return -math.log(gamma_mass) + 0.0  # + 0.0 turns -0.0 into 0.0


def _re_trace_nonneg(U):
    return np.real(np.trace(U, axis1=-2, axis2=-1)) >= 0


def _quadrant(U):
    a = U[..., 0, 0]
    return (np.real(a) >= 0) & (np.imag(a) >= 0)


def _everything(U):
    return np.ones(U.shape[:-2], dtype=bool)


RESTRICTIONS = {
    "all": _everything,
    "re-trace-nonneg": _re_trace_nonneg,
    "quadrant": _quadrant,
}


@dataclass(frozen=True)
class TalagrandReport:
    gamma_mass_est: float
    mass_interval: tuple
    S: float
    W2_est: float
    bound: float
    allowance: float
    holds_within_ci: bool
    samples: int


def _restricted_sample(N, predicate, count, stream, batch=512):
    out = []
    k = 0
    while sum(len(x) for x in out) < count:
        U = haar_unitary_batch(N, batch, "SU", stream.substream(k))
        out.append(U[predicate(U)])
        k += 1
        if k > 10_000:
            raise InvalidParameterError("restriction rejects nearly everything")
    return np.concatenate(out)[:count]


def talagrand_check(N, restriction, samples=400, rng=0, mass_samples=20000, mass_floor=0.05):
    """Finite-sample check of ``W2(lambda, gamma) <= sqrt((4/N) S(lambda, gamma))`` on SU(N).

    ``lambda`` is Haar measure restricted to ``restriction`` and normalized.
    ``W2_est`` is the exact W2 between ``samples`` restricted draws and
    ``samples`` Haar draws with squared Hilbert-Schmidt cost, which lower
    bounds the geodesic cost.  Empirical W2 is biased upward, so the
    comparison allows the W2 between the two halves of an independent Haar
    cloud of the same size.
    """
    if samples < 200:
        raise InvalidParameterError(f"need >= 200 samples per side, got {samples}")
    predicate = RESTRICTIONS[restriction] if isinstance(restriction, str) else restriction
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    hits = 0
    done = 0
    k = 0
    while done < mass_samples:
        size = min(4096, mass_samples - done)
        U = haar_unitary_batch(N, size, "SU", stream.substream(0, k))
        hits += int(np.sum(predicate(U)))
        done += size
        k += 1
    mass = hits / mass_samples
    lo, hi = wilson_interval(hits, mass_samples)
    if mass < mass_floor:
        raise InvalidParameterError(f"restriction mass {mass:.4f} below the floor {mass_floor}")
    S = relative_entropy_restricted(mass)
    lam = _restricted_sample(N, predicate, samples, stream.substream(1))
    haar = haar_unitary_batch(N, samples, "SU", stream.substream(2))
    w2, _ = wasserstein2(np.full(samples, 1.0 / samples), np.full(samples, 1.0 / samples), hs_cost(lam, haar))
    ref = haar_unitary_batch(N, samples, "SU", stream.substream(3))
    half = samples // 2
    allowance, _ = wasserstein2(np.full(half, 1.0 / half), np.full(half, 1.0 / half), hs_cost(ref[:half], ref[half:2 * half]))
    bound = math.sqrt(4.0 * S / N)
    return TalagrandReport(mass, (lo, hi), S, w2, bound, allowance, w2 <= bound + allowance, samples)


@dataclass(frozen=True)
class MetricReport:
    d_HS: float
    d_geod_upper: float
    ordered: bool
    branch_ambiguous: bool


def metric_comparison(U, V):
    """Hilbert-Schmidt distance against the length of a principal-log geodesic.

    For each component the curve ``U exp(s log(U^* V))`` joins ``U`` to ``V``
    and has HS length ``sqrt(sum theta_k^2)`` where ``e^{i theta_k}`` are the
    eigenvalues of ``U^* V`` with ``theta`` in ``(-pi, pi]``.
    """
    U = [np.asarray(u) for u in (U if isinstance(U, (list, tuple)) else [U])]
    V = [np.asarray(v) for v in (V if isinstance(V, (list, tuple)) else [V])]
    if len(U) != len(V) or any(u.shape != v.shape for u, v in zip(U, V)):
        raise InvalidParameterError("U and V must be tuples of matching shapes")
    d_hs2 = 0.0
    geo2 = 0.0
    ambiguous = False
    for u, v in zip(U, V):
        d_hs2 += float(np.linalg.norm(u - v) ** 2)
        theta = np.angle(np.linalg.eigvals(u.conj().T @ v))
        ambiguous |= bool(np.any(np.abs(np.abs(theta) - np.pi) < 1e-9))
        geo2 += float(np.sum(theta**2))
    d_hs, d_geo = math.sqrt(d_hs2), math.sqrt(geo2)
    return MetricReport(d_hs, d_geo, d_hs <= d_geo + 1e-9, ambiguous)


def measure_from_csv(path):
    """Read ``atom,weight`` rows (header allowed, ``#`` comments skipped)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    try:
        float(rows[0][1])
    except (IndexError, ValueError):
        rows = rows[1:]
    atoms = tuple(_number(r[0]) for r in rows)
    return DiscreteMeasure(atoms, np.array([float(r[1]) for r in rows]))


def _number(text):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text.strip()


def cost_from_csv(path):
    return np.loadtxt(path, delimiter=",", comments="#")
