"""Microstate membership, orbital Monte Carlo and conjugation alignment.

Membership predicates compare every word of length ``1..m`` (letters from all
families in any order, same-family neighbours included) against the target
moments.  The orbital set is the set of unitary tuples ``(U_1, ..., U_n)``
such that ``(U_i Xi_i U_i^*)_i`` is a microstate; its Haar measure is
estimated by plain hit-or-miss sampling.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DimensionMismatchError, InsufficientSamplesError, InvalidParameterError
from .linalg import dagger, eigh
from .ncalg import (
    FiniteAtoms,
    HaarUnitaryLaw,
    MatrixModel,
    Projection,
    Semicircular,
    count_words,
    family_marginal,
    iter_word_traces,
)
from .sampling import RngStream, haar_unitary_batch

__all__ = [
    "MicrostateParams",
    "OrbitalEstimate",
    "AlignmentResult",
    "reference_microstate",
    "reference_tuple",
    "delta_set_contains",
    "gamma_contains",
    "gamma_orb_contains",
    "estimate_orbital_measure",
    "wilson_interval",
    "align_conjugation",
    "ESTIMATE_COLUMNS",
]

ESTIMATE_COLUMNS = (
    "N", "m", "delta", "R", "n_samples", "hits", "hit_fraction",
    "wilson_lo", "wilson_hi", "log_measure_per_N2", "seed",
)


@dataclass(frozen=True)
class MicrostateParams:
    """``(N, m, delta, R)``; ``R=None`` means no operator-norm cutoff."""

    N: int
    m: int
    delta: float
    R: float | None = None

    def __post_init__(self):
        if int(self.N) < 1:
            raise InvalidParameterError(f"N must be >= 1, got {self.N}")
        if int(self.m) < 1:
            raise InvalidParameterError(f"m must be >= 1, got {self.m}")
        if not self.delta > 0:
            raise InvalidParameterError(f"delta must be > 0, got {self.delta}")
        if self.R is not None and not self.R > 0:
            raise InvalidParameterError(f"R must be > 0 when given, got {self.R}")


@dataclass(frozen=True)
class OrbitalEstimate:
    hits: int
    n_samples: int
    hit_fraction: float
    wilson_interval: tuple
    log_measure_per_N2: float
    zero_hits: bool
    upper_bound: float
    log_upper_bound_per_N2: float
    params: MicrostateParams
    seed: int | None = None

    def row(self):
        p = self.params
        return {
            "N": p.N, "m": p.m, "delta": p.delta, "R": "" if p.R is None else p.R,
            "n_samples": self.n_samples, "hits": self.hits, "hit_fraction": self.hit_fraction,
            "wilson_lo": self.wilson_interval[0], "wilson_hi": self.wilson_interval[1],
            "log_measure_per_N2": self.log_measure_per_N2,
            "seed": "" if self.seed is None else self.seed,
        }


def wilson_interval(hits, n, level=0.95):
    ci = stats.binomtest(int(hits), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


# --- reference microstates -----------------------------------------------

def _largest_remainder(weights, n):
    raw = np.asarray(weights, dtype=float) * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def reference_microstate(spec, N):
    """Deterministic matrices ``Xi(N)`` for a single-family law.

    Projections get ``ceil(alpha N)`` ones on the diagonal, the semicircle its
    quantile diagonal, finite atoms largest-remainder multiplicities, a Haar
    unitary the N-th roots of unity, and a matrix model of size ``n`` is
    inflated to ``I_{N/n} (x) X``.
    """
    if spec.n_families != 1:
        raise InvalidParameterError("reference_microstate takes a single-family law")
    if isinstance(spec, Projection):
        d = np.zeros(N)
        d[: math.ceil(spec.alpha * N - 1e-12)] = 1.0
        return [np.diag(d).astype(complex)]
    if isinstance(spec, Semicircular):
        q = (np.arange(N)[::-1] + 0.5) / N
        return [np.diag(stats.semicircular.ppf(q, scale=2.0)).astype(complex)]
    if isinstance(spec, FiniteAtoms):
        counts = _largest_remainder(spec.weights, N)
        d = np.repeat(np.asarray(spec.values), counts)
        return [np.diag(np.sort(d)[::-1]).astype(complex)]
    if isinstance(spec, HaarUnitaryLaw):
        return [np.diag(np.exp(2j * np.pi * np.arange(N) / N))]
    if isinstance(spec, MatrixModel):
        n = spec.dim
        if N % n:
            raise DimensionMismatchError(f"N={N} is not a multiple of the model size {n}")
        eye = np.eye(N // n)
        return [np.kron(eye, x) for x in spec.families[0]]
    raise InvalidParameterError(f"no reference microstate for {spec.kind}")


def reference_tuple(target, N, n=None):
    """Reference microstates for the first ``n`` families of ``target``."""
    n = target.n_families if n is None else n
    return [reference_microstate(family_marginal(target, i), N) for i in range(n)]


# --- membership -------------------------------------------------------------

def _power_word(k):
    return ((0, 0, False),) * k


def delta_set_contains(D, target, p):
    """Is ``diag(D)`` in the single-variable moment window of ``target``?"""
    D = np.asarray(D, dtype=float)
    if p.R is not None and np.max(np.abs(D), initial=0.0) > p.R:
        return False
    for k in range(1, p.m + 1):
        if abs(np.mean(D**k) - target.moment(_power_word(k))) >= p.delta:
            return False
    return True


def _target_table(target, letters, m):
    cache = target.__dict__.setdefault("_word_tables", {})
    key = (tuple(letters), m)
    table = cache.get(key)
    if table is None:
        table = {}
        n_letters = len(letters)
        stack = [()]
        while stack:
            w = stack.pop()
            for a in range(n_letters):
                ww = w + (a,)
                table[ww] = target.moment(tuple(letters[x] for x in ww))
                if len(ww) < m:
                    stack.append(ww)
        cache[key] = table
    return table


def _within(mats, letters, target, m, delta):
    table = _target_table(target, letters, m)
    for idx, val in iter_word_traces(mats, m):
        if abs(val - table[idx]) >= delta:
            return False
    return True


def gamma_contains(families, target, p):
    """Is the matrix tuple a microstate for ``target`` at ``(N, m, delta, R)``?

    ``families[i][j]`` is variable ``j`` of family ``i``.  Adjoint letters are
    included for the target's unitary variables.
    """
    fams = [[np.asarray(x) for x in (f if isinstance(f, (list, tuple)) else [f])] for f in families]
    if tuple(len(f) for f in fams) != target.family_sizes:
        raise DimensionMismatchError(
            f"family sizes {tuple(len(f) for f in fams)} do not match target {target.family_sizes}"
        )
    for i, f in enumerate(fams):
        for j, x in enumerate(f):
            if x.shape != (p.N, p.N):
                raise DimensionMismatchError(f"family {i} variable {j} has shape {x.shape}, expected N={p.N}")
    if p.R is not None:
        for i, f in enumerate(fams):
            if (i, 0) in target.unitary:
                continue
            if any(np.linalg.norm(x, 2) > p.R for x in f):
                return False
    letters = target.letters(with_adjoints=True)
    mats = [fams[i][j].conj().T if adj else fams[i][j] for (i, j, adj) in letters]
    return _within(mats, letters, target, p.m, p.delta)


def _conjugate(u, x):
    d = np.diagonal(x)
    if np.count_nonzero(x) == np.count_nonzero(d):
        return (u * d) @ u.conj().T
    return u @ x @ u.conj().T


def gamma_orb_contains(U, Xi, target, p, presence=None):
    """Orbital membership of ``U`` for reference microstates ``Xi``.

    ``presence`` (optional) gives extra unitary families appended after the
    rotated ones: either a tuple of matrices or a callable ``U -> tuple``.
    The target then has ``len(Xi) + len(presence)`` families.
    """
    n = len(Xi)
    if len(U) != n:
        raise DimensionMismatchError(f"{len(U)} unitaries for {n} reference families")
    rotated = []
    for i in range(n):
        u = np.asarray(U[i])
        if u.shape != (p.N, p.N):
            raise DimensionMismatchError(f"U[{i}] has shape {u.shape}, expected N={p.N}")
        fam = Xi[i] if isinstance(Xi[i], (list, tuple)) else [Xi[i]]
        rotated.append([_conjugate(u, np.asarray(x)) for x in fam])
    if presence is not None:
        extra = presence(U) if callable(presence) else presence
        rotated += [[np.asarray(w)] for w in extra]
    if p.R is not None:
        for i in range(n):
            fam = Xi[i] if isinstance(Xi[i], (list, tuple)) else [Xi[i]]
            if any(np.linalg.norm(np.asarray(x), 2) > p.R for x in fam):
                return False
    q = MicrostateParams(p.N, p.m, p.delta, None)
    return gamma_contains(rotated, target, q)


def _resolve_stream(rng):
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    if isinstance(rng, np.random.Generator):
        return RngStream(int(rng.integers(2**63)))
    raise InvalidParameterError(f"expected RngStream or seed, got {type(rng).__name__}")


def _count_hits(indices, stream, target, Xi, p, presence, group):
    hits = 0
    n = len(Xi)
    for i in indices:
        U = haar_unitary_batch(p.N, n, group, stream.substream(i))
        hits += gamma_orb_contains(list(U), Xi, target, p, presence)
    return hits


def estimate_orbital_measure(target, Xi, p, n_samples, rng, presence=None, workers=1, group="U"):
    """Hit-or-miss estimate of the Haar measure of the orbital microstate set.

    Sample ``k`` is drawn from ``rng.substream(k)``, so the result does not
    depend on ``workers``.  With no hits the per-N^2 log is ``-inf`` and the
    rule-of-three bound ``3/n`` is reported instead.
    """
    if n_samples < 100:
        raise InsufficientSamplesError(f"estimate_orbital_measure needs >= 100 samples, got {n_samples}")
    stream = _resolve_stream(rng)
    # fill the moment table once before any fan-out
    letters = target.letters(with_adjoints=True)
    _target_table(target, letters, p.m)
    workers = max(1, int(workers))
    chunks = [range(k, n_samples, workers) for k in range(workers)]
    if workers == 1:
        hits = _count_hits(chunks[0], stream, target, Xi, p, presence, group)
    else:
        with ThreadPoolExecutor(workers) as pool:
            hits = sum(pool.map(lambda c: _count_hits(c, stream, target, Xi, p, presence, group), chunks))
    frac = hits / n_samples
    lo, hi = wilson_interval(hits, n_samples)
    n2 = float(p.N) ** 2
    if hits:
        logm = math.log(frac) / n2
        upper = hi
    else:
        logm = -math.inf
        upper = 3.0 / n_samples
    return OrbitalEstimate(
        hits=int(hits),
        n_samples=int(n_samples),
        hit_fraction=frac,
        wilson_interval=(lo, hi),
        log_measure_per_N2=logm,
        zero_hits=hits == 0,
        upper_bound=upper,
        log_upper_bound_per_N2=math.log(upper) / n2,
        params=p,
        seed=stream.master_seed,
    )


# --- alignment --------------------------------------------------------------

@dataclass(frozen=True)
class AlignmentResult:
    U: np.ndarray
    residual: float
    converged: bool
    iterations: int
    initial_residual: float


def _herm(x):
    return 0.5 * (x + dagger(x))


def _objective(U, A, B):
    return sum(float(np.linalg.norm(U @ a @ U.conj().T - b) ** 2) for a, b in zip(A, B))


def _residual(U, A, B, p_norm):
    n = A[0].shape[0]
    total = 0.0
    for a, b in zip(A, B):
        s = np.linalg.svd(U @ a @ U.conj().T - b, compute_uv=False)
        total += float(np.mean(s**p_norm) ** (2.0 / p_norm))
    return math.sqrt(total) if n else 0.0


def _phase_fix(A, B, va, vb):
    # best torus element D for D A' D^* ~ B' in the two eigenbases
    K = sum((va.conj().T @ a @ va) * np.conj(vb.conj().T @ b @ vb) for a, b in zip(A, B))
    w, e = np.linalg.eigh(_herm(K))
    d = np.conj(e[:, -1])
    mag = np.abs(d)
    d = np.where(mag > 1e-14, d / np.where(mag > 0, mag, 1.0), 1.0)
    return vb @ np.diag(d) @ va.conj().T


def _initial_candidates(A, B):
    pairs = [(sum(_herm(a) for a in A), sum(_herm(b) for b in B))]
    pairs += [(_herm(a), _herm(b)) for a, b in zip(A, B)]
    out = []
    for sa, sb in pairs:
        _, va = eigh(sa)
        _, vb = eigh(sb)
        out.append(vb @ va.conj().T)
        out.append(_phase_fix(A, B, va, vb))
    return out


def align_conjugation(A, B, p_norm=2.0, budget=500, tol=1e-13):
    """Search a unitary ``U`` with ``U A_i U^* ~ B_i`` for all ``i``.

    Candidates from matching sorted eigenbases (of the sums and of each pair,
    with a torus phase correction) seed a Cayley-retracted gradient descent
    on ``sum_i ||U A_i U^* - B_i||_HS^2``.  The returned residual is
    ``sqrt(sum_i ||U A_i U^* - B_i||_{p,tr}^2)``.
    """
    A = [np.asarray(a, dtype=complex) for a in (A if isinstance(A, (list, tuple)) else [A])]
    B = [np.asarray(b, dtype=complex) for b in (B if isinstance(B, (list, tuple)) else [B])]
    if len(A) != len(B) or not A:
        raise DimensionMismatchError(f"tuple lengths differ: {len(A)} vs {len(B)}")
    n = A[0].shape[0]
    for x in A + B:
        if x.shape != (n, n):
            raise DimensionMismatchError(f"all matrices must be {n}x{n}, got {x.shape}")
    if p_norm < 1:
        raise InvalidParameterError(f"p_norm must be >= 1, got {p_norm}")
    cands = _initial_candidates(A, B)
    base_res = _residual(cands[0], A, B, p_norm)
    U = min(cands, key=lambda u: _objective(u, A, B))
    f = _objective(U, A, B)
    eye = np.eye(n)
    step = 1.0
    converged = False
    it = 0
    scale = max(1.0, sum(float(np.linalg.norm(b) ** 2) for b in B))
    for it in range(1, budget + 1):
        X = np.zeros((n, n), dtype=complex)
        for a, b in zip(A, B):
            C = U @ a @ U.conj().T
            E = C - b
            X += C @ E.conj().T - E.conj().T @ C
        omega = 0.5 * (X - X.conj().T)
        gnorm2 = float(np.linalg.norm(omega) ** 2)
        if f <= tol * scale or gnorm2 <= tol * tol * scale:
            converged = True
            break
        accepted = False
        while step > 1e-14:
            half = 0.5 * step * omega
            Q = np.linalg.solve(eye - half, eye + half)
            Un = Q @ U
            fn = _objective(Un, A, B)
            if fn <= f - 1e-4 * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        if f - fn <= 1e-15 * scale:
            U, f = Un, fn
            converged = True
            break
        U, f = Un, fn
        step = min(step * 2.0, 1e3)
    res = _residual(U, A, B, p_norm)
    if res > base_res:
        U, res = cands[0], base_res
    return AlignmentResult(U=U, residual=res, converged=converged, iterations=it, initial_residual=base_res)


def count_membership_words(target, m):
    return count_words(len(target.letters(with_adjoints=True)), m)
