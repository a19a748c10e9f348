"""Permutation microstates for two discrete random variables.

The classical analogue of orbital microstates: with sorted type vectors
``x`` and ``y`` fixed, the probability that a uniform permutation ``sigma``
makes ``(x, y o sigma)`` look like the joint law tends to ``exp(-N I(X;Y))``.
The exact path counts permutations per contingency table; the Monte Carlo
path samples permutations and applies moment windows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import special

from .errors import InsufficientSamplesError, InvalidParameterError
from .microstates import wilson_interval
from .sampling import as_generator

__all__ = [
    "JointDistribution",
    "ContingencyTable",
    "HsymEstimate",
    "exact_joint_type_count",
    "feasible_tables",
    "target_type",
    "h_sym_exact",
    "h_sym_exact_fraction",
    "h_sym_mc",
    "mutual_information",
    "joint_to_json",
    "joint_from_json",
]


@dataclass(frozen=True)
class JointDistribution:
    support_x: tuple
    support_y: tuple
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(self.support_x), len(self.support_y)):
            raise InvalidParameterError(
                f"probs shape {p.shape} does not match supports {len(self.support_x)}x{len(self.support_y)}"
            )
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "support_x", tuple(float(v) for v in self.support_x))
        object.__setattr__(self, "support_y", tuple(float(v) for v in self.support_y))
        object.__setattr__(self, "probs", p)

    @property
    def px(self):
        return self.probs.sum(axis=1)

    @property
    def py(self):
        return self.probs.sum(axis=0)

    def moment(self, a, b):
        """``E[X^a Y^b]``."""
        x = np.asarray(self.support_x)[:, None] ** a
        y = np.asarray(self.support_y)[None, :] ** b
        return float(np.sum(self.probs * x * y))

    @classmethod
    def independent(cls, support_x, px, support_y, py):
        return cls(support_x, support_y, np.outer(px, py))


@dataclass(frozen=True)
class ContingencyTable:
    counts: tuple

    def __post_init__(self):
        c = tuple(tuple(int(v) for v in row) for row in self.counts)
        if any(v < 0 for row in c for v in row):
            raise InvalidParameterError("table counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @property
    def N(self):
        return sum(map(sum, self.counts))

    @property
    def row_sums(self):
        return tuple(sum(r) for r in self.counts)

    @property
    def col_sums(self):
        return tuple(map(sum, zip(*self.counts)))


def exact_joint_type_count(table, row_type=None, col_type=None, return_flag=False):
    """Number of permutations ``sigma_2`` that realize ``table``.

    With ``sigma_1`` the identity and both type vectors sorted, the count is
    ``prod_a multinomial(n_a.; n_a1, ..., n_ab) * prod_b n_.b!``.  If the table's
    margins disagree with the given types the count is 0 and, with
    ``return_flag``, the mismatch flag is set.
    """
    if not isinstance(table, ContingencyTable):
        table = ContingencyTable(table)
    rows, cols = table.row_sums, table.col_sums
    mismatch = (row_type is not None and tuple(row_type) != rows) or (
        col_type is not None and tuple(col_type) != cols
    )
    if mismatch:
        return (0, True) if return_flag else 0
    count = 1
    for row, r in zip(table.counts, rows):
        count *= math.factorial(r)
        for v in row:
            count //= math.factorial(v)
    for c in cols:
        count *= math.factorial(c)
    return (count, False) if return_flag else count


def feasible_tables(row_type, col_type):
    """All non-negative integer tables with the given margins."""
    row_type, col_type = list(row_type), list(col_type)
    if sum(row_type) != sum(col_type):
        return
    n_cols = len(col_type)

    def fill_row(a, cols_left):
        if a == len(row_type) - 1:
            yield [tuple(cols_left)]
            return
        for row in _compositions(row_type[a], cols_left):
            rest = [c - v for c, v in zip(cols_left, row)]
            for tail in fill_row(a + 1, rest):
                yield [row] + tail

    if not row_type:
        return
    for rows in fill_row(0, col_type):
        if len(rows[-1]) == n_cols:
            yield ContingencyTable(tuple(rows))


def _compositions(total, caps):
    if len(caps) == 1:
        if total <= caps[0]:
            yield (total,)
        return
    for v in range(min(total, caps[0]) + 1):
        for rest in _compositions(total - v, caps[1:]):
            yield (v,) + rest


def target_type(joint, N):
    """Largest-remainder rounding of ``N p_ab`` to an integer table summing to N."""
    raw = joint.probs.ravel() * N
    counts = np.floor(raw).astype(int)
    short = N - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return ContingencyTable(counts.reshape(joint.probs.shape).tolist())


def _tv(table, target):
    n = target.N
    diff = sum(abs(a - b) for ra, rb in zip(table.counts, target.counts) for a, b in zip(ra, rb))
    return Fraction(diff, 2 * n)


def h_sym_exact_fraction(joint, N, delta=0.0):
    """Exact probability that a uniform ``sigma_2`` lands within ``delta`` TV of the target type."""
    if N < 1:
        raise InvalidParameterError(f"N must be >= 1, got {N}")
    target = target_type(joint, N)
    bound = Fraction(delta).limit_denominator(10**12) if not isinstance(delta, Fraction) else delta
    total = 0
    for t in feasible_tables(target.row_sums, target.col_sums):
        if _tv(t, target) <= bound:
            total += exact_joint_type_count(t)
    return Fraction(total, math.factorial(N))


def h_sym_exact(joint, N, delta=0.0):
    """``(1/N) log P(sigma_2 realizes a table within delta of the target type)``.

    Distance between types is total variation.  The log is taken of the exact
    rational probability, so the only rounding is in the final ``math.log``.
    Returns ``-inf`` if no table qualifies (cannot happen for ``delta >= 0``
    since the target table itself is always feasible).
    """
    frac = h_sym_exact_fraction(joint, N, delta)
    if frac == 0:
        return -math.inf
    return (math.log(frac.numerator) - math.log(frac.denominator)) / N


@dataclass(frozen=True)
class HsymEstimate:
    hits: int
    samples: int
    fraction: float
    value: float
    interval: tuple
    se: float
    zero_hits: bool
    upper_bound: float


def _type_vector(support, probs, N):
    raw = np.asarray(probs) * N
    counts = np.floor(raw).astype(int)
    short = N - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return np.sort(np.repeat(np.asarray(support, dtype=float), counts))[::-1]


def _monomials(m):
    return [(a, b) for k in range(1, m + 1) for a in range(k + 1) for b in [k - a]]


def h_sym_mc(joint, N, m, delta, samples, rng, batch=4096):
    """Monte Carlo ``(1/N) log P`` with the literal moment windows.

    ``x`` and ``y`` are the sorted type vectors of the marginals; a sampled
    ``sigma_2`` is a hit if ``|mean(x^a (y o sigma_2)^b) - E[X^a Y^b]| < delta``
    for every ``1 <= a + b <= m``.
    """
    if samples < 1000:
        raise InsufficientSamplesError(f"h_sym_mc needs >= 1000 samples, got {samples}")
    gen = as_generator(rng)
    x = _type_vector(joint.support_x, joint.px, N)
    y = _type_vector(joint.support_y, joint.py, N)
    monos = _monomials(m)
    targets = np.array([joint.moment(a, b) for a, b in monos])
    xa = np.stack([x**a for a, _ in monos])
    hits = 0
    done = 0
    base = np.tile(np.arange(N), (min(batch, samples), 1))
    while done < samples:
        size = min(batch, samples - done)
        perms = gen.permuted(base[:size], axis=1)
        yp = y[perms]
        ok = np.ones(size, dtype=bool)
        for k, (a, b) in enumerate(monos):
            vals = (xa[k][None, :] * yp**b).mean(axis=1)
            ok &= np.abs(vals - targets[k]) < delta
        hits += int(ok.sum())
        done += size
    frac = hits / samples
    lo, hi = wilson_interval(hits, samples)
    if hits:
        value = math.log(frac) / N
        se = math.sqrt(frac * (1 - frac) / samples) / (N * frac)
        interval = (math.log(lo) / N, math.log(hi) / N)
        upper = hi
    else:
        value, se = -math.inf, math.inf
        upper = 3.0 / samples
        interval = (-math.inf, math.log(upper) / N)
    return HsymEstimate(hits, samples, frac, value, interval, se, hits == 0, upper)


def mutual_information(joint):
    """``sum p_ab log(p_ab / (p_a q_b))`` in nats."""
    p = joint.probs
    return float(np.sum(special.rel_entr(p, np.outer(joint.px, joint.py))))


def joint_to_json(joint):
    return json.dumps({
        "schema": "joint/1",
        "support_x": list(joint.support_x),
        "support_y": list(joint.support_y),
        "probs": joint.probs.tolist(),
    })


def joint_from_json(text):
    doc = json.loads(text) if isinstance(text, str) else text
    if doc.get("schema") != "joint/1":
        raise InvalidParameterError(f"expected schema 'joint/1', got {doc.get('schema')!r}")
    return JointDistribution(doc["support_x"], doc["support_y"], doc["probs"])
