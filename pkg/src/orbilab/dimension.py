"""Covering and packing numbers, finite homogeneous spaces and exact
hyperfinite free entropy dimension.

Balls are open and centred in the set itself.  Two balls count as
overlapping when they share a point of the set, so packing is maximum
independent set on that conflict graph.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.spatial.distance import cdist

from .errors import InvalidParameterError
from .sampling import as_generator

__all__ = [
    "PointCloud",
    "covering_number",
    "packing_number",
    "check_kp_sandwich",
    "FiniteGroup",
    "cyclic_group",
    "subgroups",
    "homogeneous_covering_bound",
    "HyperfiniteProfile",
    "delta0_hyperfinite",
    "delta0_compose",
    "profile_to_json",
    "profile_from_json",
    "EXACT_LIMIT",
]

EXACT_LIMIT = 64


@dataclass
class PointCloud:
    """Finite metric space given by its distance matrix."""

    dist: np.ndarray
    labels: list = field(default=None)

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise InvalidParameterError(f"distance matrix must be square, got {d.shape}")
        if np.any(np.abs(np.diag(d)) > 0) or np.any(np.abs(d - d.T) > 1e-12) or np.any(d < 0):
            raise InvalidParameterError("distance matrix must be symmetric, non-negative, zero on the diagonal")
        self.dist = d
        if self.labels is None:
            self.labels = list(range(d.shape[0]))

    def __len__(self):
        return self.dist.shape[0]

    @classmethod
    def from_points(cls, points, metric=None):
        pts = list(points)
        if metric is None:
            arr = np.asarray(pts, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            return cls(cdist(arr, arr), pts)
        n = len(pts)
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = d[j, i] = metric(pts[i], pts[j])
        return cls(d, pts)

    def check_triangle(self, n_triples=1000, rng=0, tol=1e-9):
        n = len(self)
        gen = as_generator(rng)
        idx = gen.integers(0, n, size=(n_triples, 3))
        a, b, c = idx.T
        return bool(np.all(self.dist[a, c] <= self.dist[a, b] + self.dist[b, c] + tol))

    def subset(self, idx):
        idx = list(idx)
        return PointCloud(self.dist[np.ix_(idx, idx)], [self.labels[i] for i in idx])


def _ball_matrix(cloud, eps):
    if not eps > 0:
        raise InvalidParameterError(f"eps must be > 0, got {eps}")
    return cloud.dist < eps


def _check_exact(cloud):
    if len(cloud) > EXACT_LIMIT:
        raise InvalidParameterError(
            f"exact mode is limited to {EXACT_LIMIT} points (got {len(cloud)}); use mode='greedy'"
        )


def _solve_binary(c, A, lb, ub):
    n = len(c)
    res = milp(
        c=c,
        constraints=[LinearConstraint(A, lb, ub)] if A is not None and A.shape[0] else [],
        integrality=np.ones(n),
        bounds=Bounds(0, 1),
        options={"mip_rel_gap": 0.0},
    )
    if res.status != 0:
        raise RuntimeError(f"integer program failed: {res.message}")
    return np.round(res.x).astype(int)


def covering_number(cloud, eps, mode="exact", within=None):
    """Fewest open ``eps``-balls centred in the cloud that cover it.

    With ``within`` (indices into ``cloud``) only that subset must be covered
    while centres may be any point of ``cloud``.
    """
    n = len(cloud)
    if n == 0:
        return 0
    C = _ball_matrix(cloud, eps)
    if within is not None:
        C = C[:, sorted(set(within))]
        if C.shape[1] == 0:
            return 0
    if mode == "greedy":
        uncovered = np.ones(C.shape[1], dtype=bool)
        count = 0
        while uncovered.any():
            gains = (C & uncovered[None, :]).sum(axis=1)
            best = int(np.argmax(gains))
            uncovered &= ~C[best]
            count += 1
        return count
    if mode != "exact":
        raise InvalidParameterError(f"unknown mode {mode!r}")
    _check_exact(cloud)
    m = C.shape[1]
    x = _solve_binary(np.ones(n), C.T.astype(float), np.ones(m), np.full(m, np.inf))
    return int(x.sum())


def _conflicts(cloud, eps):
    C = _ball_matrix(cloud, eps).astype(int)
    return (C @ C.T) > 0


def packing_number(cloud, eps, mode="exact"):
    """Most pairwise disjoint open ``eps``-balls (disjoint within the cloud)."""
    n = len(cloud)
    if n == 0:
        return 0
    conf = _conflicts(cloud, eps)
    if mode == "greedy":
        deg = conf.sum(axis=1)
        alive = np.ones(n, dtype=bool)
        count = 0
        for i in np.argsort(deg, kind="stable"):
            if alive[i]:
                count += 1
                alive &= ~conf[i]
        return count
    if mode != "exact":
        raise InvalidParameterError(f"unknown mode {mode!r}")
    _check_exact(cloud)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if conf[i, j]]
    if not pairs:
        return n
    A = np.zeros((len(pairs), n))
    for r, (i, j) in enumerate(pairs):
        A[r, i] = A[r, j] = 1.0
    x = _solve_binary(-np.ones(n), A, np.full(len(pairs), -np.inf), np.ones(len(pairs)))
    return int(x.sum())


@dataclass(frozen=True)
class SandwichReport:
    P_eps: int
    K_2eps: int
    P_4eps: int
    holds: bool


def check_kp_sandwich(cloud, eps):
    """``P_eps >= K_2eps >= P_4eps`` computed exactly."""
    p1 = packing_number(cloud, eps)
    k2 = covering_number(cloud, 2 * eps)
    p4 = packing_number(cloud, 4 * eps)
    return SandwichReport(p1, k2, p4, p1 >= k2 >= p4)


# --- finite groups ------------------------------------------------------------

@dataclass
class FiniteGroup:
    """Elements ``0..n-1`` with a multiplication table and a distance matrix."""

    table: np.ndarray
    dist: np.ndarray
    identity: int = 0

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=int)
        self.dist = np.asarray(self.dist, dtype=float)
        n = self.table.shape[0]
        if self.table.shape != (n, n) or self.dist.shape != (n, n):
            raise InvalidParameterError("table and distance matrix must be n x n")

    @property
    def order(self):
        return self.table.shape[0]

    def mul(self, a, b):
        return int(self.table[a, b])

    def is_subgroup(self, H):
        H = set(H)
        return self.identity in H and all(self.mul(a, b) in H for a in H for b in H)

    def is_bi_invariant(self, tol=1e-12):
        n = self.order
        for g in range(n):
            left = self.dist[np.ix_(self.table[g], self.table[g])]
            right = self.dist[np.ix_(self.table[:, g], self.table[:, g])]
            if np.max(np.abs(left - self.dist)) > tol or np.max(np.abs(right - self.dist)) > tol:
                return False
        return True


def cyclic_group(n):
    """``Z_n`` with the word metric ``min(|a-b|, n-|a-b|)``."""
    a = np.arange(n)
    diff = np.abs(a[:, None] - a[None, :])
    return FiniteGroup((a[:, None] + a[None, :]) % n, np.minimum(diff, n - diff).astype(float))


def subgroups(G):
    """Subgroups generated by at most two elements (all of them for cyclic groups)."""
    n = G.order
    out = []
    seen = set()
    for gens in itertools.chain.from_iterable(itertools.combinations(range(n), k) for k in (0, 1, 2)):
        H = {G.identity}
        frontier = list(gens)
        while frontier:
            g = frontier.pop()
            if g in H:
                continue
            H.add(g)
            frontier += [G.mul(g, h) for h in list(H)] + [G.mul(h, g) for h in list(H)]
        key = frozenset(H)
        if key not in seen:
            seen.add(key)
            out.append(sorted(H))
    return out


@dataclass(frozen=True)
class HomogeneousReport:
    K_eps_Gamma: int
    K_eps_H: int
    P_2eps_quotient: int
    holds: bool


def homogeneous_covering_bound(G, H, Gamma, eps):
    """Exact check of ``K_eps(Gamma) >= K_eps(H) P_2eps(pi(Gamma))``.

    The quotient metric is ``d_Q(g1 H, g2 H) = min_h d(g1, g2 h)``.
    ``K_eps(H)`` is the covering number of ``H`` by balls centred anywhere in
    ``G``: the proof translates a net of ``Gamma`` back onto ``H`` and the
    translated centres need not lie in ``H``.  With centres restricted to
    ``H`` the inequality fails, e.g. on ``Z_6``, ``H = {0, 2, 4}``, ``eps = 1.4``.
    """
    H = sorted(set(H))
    Gamma = sorted(set(Gamma))
    if not G.is_subgroup(H):
        raise InvalidParameterError(f"{H} is not a subgroup")
    gam = set(Gamma)
    if any(G.mul(g, h) not in gam for g in Gamma for h in H):
        raise InvalidParameterError("Gamma is not H-saturated (Gamma H != Gamma)")
    cosets = []
    seen = set()
    for g in Gamma:
        if g in seen:
            continue
        c = sorted(G.mul(g, h) for h in H)
        seen.update(c)
        cosets.append(c)
    m = len(cosets)
    dq = np.zeros((m, m))
    for a in range(m):
        for b in range(a + 1, m):
            g1, g2 = cosets[a][0], cosets[b][0]
            dq[a, b] = dq[b, a] = min(G.dist[g1, G.mul(g2, h)] for h in H)
    full = PointCloud(G.dist)
    kg = covering_number(full.subset(Gamma), eps)
    kh = covering_number(full, eps, within=H)
    pq = packing_number(PointCloud(dq), 2 * eps)
    return HomogeneousReport(kg, kh, pq, kg >= kh * pq)


# --- hyperfinite profiles -------------------------------------------------------

def _frac(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x).limit_denominator(10**9) if isinstance(x, float) else Fraction(x)


@dataclass(frozen=True)
class HyperfiniteProfile:
    """Diffuse weight plus matrix blocks ``M_{m_k}`` of trace weight ``w_k``.

    ``residual`` is the unassigned weight ``1 - diffuse - sum w_k``; it must
    be zero unless ``residual_size`` declares the block size it stands for.
    """

    diffuse_weight: Fraction = Fraction(0)
    atoms: tuple = ()
    residual_size: int | None = None

    def __post_init__(self):
        dw = _frac(self.diffuse_weight)
        atoms = tuple((int(m), _frac(w)) for m, w in self.atoms)
        if dw < 0 or dw > 1:
            raise InvalidParameterError(f"diffuse weight {dw} outside [0, 1]")
        for m, w in atoms:
            if m < 1 or w <= 0:
                raise InvalidParameterError(f"atom ({m}, {w}) needs size >= 1 and positive weight")
        if dw + sum(w for _, w in atoms) > 1:
            raise InvalidParameterError("weights exceed 1")
        object.__setattr__(self, "diffuse_weight", dw)
        object.__setattr__(self, "atoms", atoms)

    @property
    def residual(self):
        return 1 - self.diffuse_weight - sum(w for _, w in self.atoms)

    @classmethod
    def truncated(cls, diffuse_weight, atoms, ell, residual_size=None):
        """Keep the first ``ell`` atoms; the rest becomes the residual weight."""
        return cls(diffuse_weight, tuple(atoms)[:ell], residual_size)


def delta0_hyperfinite(profile):
    """Exact ``1 - sum_k w_k^2 / m_k^2``; the diffuse part subtracts nothing."""
    total = Fraction(1) - sum(w * w / (m * m) for m, w in profile.atoms)
    r = profile.residual
    if r > 0:
        if profile.residual_size is None:
            raise InvalidParameterError(
                f"profile has undeclared residual weight {r}; give residual_size or complete the atoms"
            )
        total -= r * r / (profile.residual_size**2)
    return total


@dataclass(frozen=True)
class Composition:
    delta0_orb: Fraction
    delta0_join: Fraction


def delta0_compose(profiles, relation="free"):
    """Orbital term and joint ``delta_0`` from ``delta_0(join) = orb + sum delta_0(X_i)``.

    ``relation`` is ``"free"`` (orbital term 0), ``"identical"`` (all profiles
    equal, orbital term ``-(n-1) delta_0(X)``) or a custom orbital value
    ``c <= 0``.
    """
    profiles = list(profiles)
    if not profiles:
        raise InvalidParameterError("need at least one profile")
    d = [delta0_hyperfinite(p) for p in profiles]
    n = len(d)
    if relation == "free":
        orb = Fraction(0)
    elif relation == "identical":
        if any(p != profiles[0] for p in profiles[1:]):
            raise InvalidParameterError("identical relation requires equal profiles")
        orb = -(n - 1) * d[0]
    else:
        orb = _frac(relation)
        if orb > 0:
            raise InvalidParameterError(f"orbital term must be <= 0, got {orb}")
        if n == 1 and orb != 0:
            raise InvalidParameterError("a single family has orbital term 0")
    return Composition(orb, orb + sum(d))


def profile_to_json(profile):
    return json.dumps({
        "schema": "profile/1",
        "diffuse_weight": str(profile.diffuse_weight),
        "atoms": [[m, str(w)] for m, w in profile.atoms],
        "residual_size": profile.residual_size,
    })


def profile_from_json(text):
    doc = json.loads(text) if isinstance(text, str) else text
    if doc.get("schema") != "profile/1":
        raise InvalidParameterError(f"expected schema 'profile/1', got {doc.get('schema')!r}")
    return HyperfiniteProfile(
        _frac(doc.get("diffuse_weight", 0)),
        tuple((int(m), _frac(w)) for m, w in doc.get("atoms", [])),
        doc.get("residual_size"),
    )
