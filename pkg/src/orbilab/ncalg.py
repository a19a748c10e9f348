"""Non-commutative words, tracial moment oracles and free products.

A letter is a triple ``(family, variable, adjoint)``; a word is a tuple of
letters.  A :class:`TracialSpec` answers ``moment(word)``.  Joint
distributions of several families are built from catalog laws, matrix models,
free products and the derived constructions :class:`Identical` and
:class:`Liberated`.

Free-product moments use the centering recursion: if ``b_1 ... b_r`` are
elements of alternating free blocks then

    0 = tau(prod_j (b_j - tau(b_j)))
      = sum_{S subset [r]} (-1)^{r-|S|} prod_{j not in S} tau(b_j) tau(prod_{j in S} b_j)

and every proper subset ``S`` yields a strictly shorter word.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .config import TOL
from .errors import BudgetExceededError, DimensionMismatchError, InvalidParameterError

__all__ = [
    "letter",
    "word_from_string",
    "eval_word",
    "iter_word_traces",
    "all_words",
    "count_words",
    "TracialSpec",
    "MatrixModel",
    "Semicircular",
    "Projection",
    "FiniteAtoms",
    "HaarUnitaryLaw",
    "FreeProduct",
    "Identical",
    "Liberated",
    "moment",
    "free_product_moment",
    "mf_free_deviation",
    "spec_to_json",
    "spec_from_json",
    "SCHEMA",
    "family_marginal",
    "real_moment",
]

SCHEMA = "tracial-spec/1"
DEFAULT_WORD_BUDGET = 10**6


def letter(family, variable=0, adjoint=False):
    return (int(family), int(variable), bool(adjoint))


def word_from_string(text):
    """Parse ``"x0 x1* x0"`` style words (``x<family>[.<var>][*]``)."""
    out = []
    for tok in text.split():
        adj = tok.endswith("*")
        tok = tok.rstrip("*").lstrip("xuv")
        fam, _, var = tok.partition(".")
        out.append(letter(int(fam), int(var or 0), adj))
    return tuple(out)


def eval_word(word, assignment):
    """``tr_N`` of the product of assigned matrices in letter order.

    ``assignment[i][j]`` is the matrix for family ``i``, variable ``j``.
    The empty word evaluates to 1.
    """
    if not word:
        return 1.0 + 0.0j
    prod = None
    n = None
    for pos, (i, j, adj) in enumerate(word):
        try:
            m = np.asarray(assignment[i][j])
        except (IndexError, KeyError, TypeError) as exc:
            raise InvalidParameterError(f"letter {pos} {(i, j, adj)} has no assigned matrix") from exc
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError(f"letter {pos} {(i, j, adj)}: matrix not square, shape {m.shape}")
        if n is None:
            n = m.shape[0]
        elif m.shape[0] != n:
            raise DimensionMismatchError(
                f"letter {pos} {(i, j, adj)} has dimension {m.shape[0]}, expected {n}"
            )
        if adj:
            m = m.conj().T
        prod = m if prod is None else prod @ m
    return complex(np.trace(prod) / n)


def count_words(n_letters, m):
    return sum(n_letters**k for k in range(1, m + 1))


def all_words(alphabet, m):
    """All words of length 1..m over ``alphabet`` in length-then-lexicographic order."""
    for k in range(1, m + 1):
        yield from itertools.product(alphabet, repeat=k)


def iter_word_traces(mats, m):
    """Yield ``(index_word, tr_N(product))`` for every word of length 1..m.

    ``mats`` is a list of equally sized matrices (adjoints already applied).
    Words come out length by length in lexicographic order.  Only products of
    length ``<= ceil(m/2)`` are formed; longer words are traced as
    ``tr(P_prefix P_suffix)``, which costs O(N^2).
    """
    mats = [np.asarray(x) for x in mats]
    if not mats:
        return
    n = mats[0].shape[0]
    half = (m + 1) // 2
    prods = {(a,): x for a, x in enumerate(mats)}
    for k in range(2, half + 1):
        for w in itertools.product(range(len(mats)), repeat=k):
            prods[w] = prods[w[:-1]] @ mats[w[-1]]
    transposed = {}
    for k in range(1, m + 1):
        for w in itertools.product(range(len(mats)), repeat=k):
            if k <= half:
                yield w, complex(np.trace(prods[w]) / n)
                continue
            head, tail = w[:half], w[half:]
            t = transposed.get(tail)
            if t is None:
                t = transposed[tail] = prods[tail].T
            yield w, complex(np.sum(prods[head] * t) / n)


class TracialSpec:
    """Moment oracle for a tuple of non-commutative families.

    Subclasses set ``family_sizes`` (number of variables per family),
    ``unitary`` (set of ``(family, variable)`` pairs that are unitary) and
    ``operator_bound``, and implement ``_moment`` for validated words.
    """

    family_sizes: tuple = ()
    unitary: frozenset = frozenset()
    operator_bound: float = 1.0
    kind = "abstract"

    @property
    def n_families(self):
        return len(self.family_sizes)

    def letters(self, with_adjoints=True):
        out = []
        for i, r in enumerate(self.family_sizes):
            for j in range(r):
                out.append(letter(i, j))
                if with_adjoints and (i, j) in self.unitary:
                    out.append(letter(i, j, True))
        return out

    def validate(self, word):
        for pos, (i, j, adj) in enumerate(word):
            if not (0 <= i < self.n_families and 0 <= j < self.family_sizes[i]):
                raise InvalidParameterError(f"letter {pos} {(i, j, adj)} out of range for {self.kind}")
            if adj and not self._adjoint_allowed(i, j):
                raise InvalidParameterError(
                    f"letter {pos} {(i, j, adj)}: adjoint on a self-adjoint {self.kind} letter"
                )

    _adjoint_ok = False

    def _adjoint_allowed(self, i, j):
        return self._adjoint_ok or (i, j) in self.unitary

    def moment(self, word):
        word = tuple(tuple(x) if not isinstance(x, tuple) else x for x in word)
        self.validate(word)
        if not word:
            return 1.0 + 0.0j
        return complex(self._moment(word))

    def _moment(self, word):
        raise NotImplementedError


def _power_of_single(word):
    # exponent of a single-variable word; unitary adjoints count -1
    return sum(-1 if adj else 1 for (_, _, adj) in word)


@dataclass(eq=False)
class MatrixModel(TracialSpec):
    """Distribution of explicit matrices under ``tr_N``.

    ``families[i][j]`` is variable ``j`` of family ``i``.  Adjoint letters are
    allowed on every variable and mean conjugate transpose.
    """

    families: list
    unitary_vars: frozenset = frozenset()
    kind = "matrix-model"
    _adjoint_ok = True

    def __post_init__(self):
        fams = []
        n = None
        for fam in self.families:
            if isinstance(fam, np.ndarray) and fam.ndim == 2:
                fam = [fam]
            fam = [np.asarray(x, dtype=complex) for x in fam]
            for x in fam:
                if n is None:
                    n = x.shape[0]
                if x.shape != (n, n):
                    raise DimensionMismatchError(f"matrix model shapes differ: {x.shape} vs {(n, n)}")
            fams.append(fam)
        self.families = fams
        self.dim = n
        self.family_sizes = tuple(len(f) for f in fams)
        self.unitary = frozenset(self.unitary_vars)
        norms = [np.linalg.norm(x, 2) for f in fams for x in f]
        self.operator_bound = float(max(norms, default=0.0))

    def _moment(self, word):
        return eval_word(word, self.families)


@dataclass(eq=False)
class Semicircular(TracialSpec):
    """Standard semicircular law (variance 1, support [-2, 2])."""

    kind = "semicircular"

    def __post_init__(self):
        self.family_sizes = (1,)
        self.operator_bound = 2.0

    def _moment(self, word):
        k = len(word)
        if k % 2:
            return 0.0
        h = k // 2
        return comb(2 * h, h) // (h + 1)


@dataclass(eq=False)
class Projection(TracialSpec):
    alpha: float
    kind = "projection"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParameterError(f"projection trace must lie in [0,1], got {self.alpha}")
        self.family_sizes = (1,)
        self.operator_bound = 1.0

    def _moment(self, word):
        return self.alpha


@dataclass(eq=False)
class FiniteAtoms(TracialSpec):
    values: tuple
    weights: tuple
    kind = "finite-atoms"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if v.shape != w.shape or v.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("finite-atoms needs matching values/weights with weights summing to 1")
        self.values = tuple(v.tolist())
        self.weights = tuple(w.tolist())
        self.family_sizes = (1,)
        self.operator_bound = float(np.max(np.abs(v)))

    def _moment(self, word):
        v = np.asarray(self.values)
        return float(np.dot(self.weights, v ** len(word)))


@dataclass(eq=False)
class HaarUnitaryLaw(TracialSpec):
    """A single Haar unitary: ``tau(u^k) = [k == 0]``."""

    kind = "haar-unitary"

    def __post_init__(self):
        self.family_sizes = (1,)
        self.unitary = frozenset({(0, 0)})
        self.operator_bound = 1.0

    def _moment(self, word):
        return 1.0 if _power_of_single(word) == 0 else 0.0


def _merge_blocks(blocks):
    out = []
    for b, w in blocks:
        if out and out[-1][0] == b:
            out[-1] = (b, out[-1][1] + w)
        else:
            out.append((b, w))
    return out


@dataclass(eq=False)
class FreeProduct(TracialSpec):
    """Free product of marginal specs.

    The joint families are the concatenation of the marginals' families; each
    marginal (possibly multi-family) is one free block.
    """

    marginals: list
    cache: dict = field(default_factory=dict, repr=False)
    kind = "free-product"
    _adjoint_ok = False

    def __post_init__(self):
        self.marginals = list(self.marginals)
        sizes, unitary, owner = [], set(), []
        for b, spec in enumerate(self.marginals):
            for local, r in enumerate(spec.family_sizes):
                g = len(sizes)
                sizes.append(r)
                owner.append((b, local))
                for j in range(r):
                    if (local, j) in spec.unitary:
                        unitary.add((g, j))
        self.family_sizes = tuple(sizes)
        self.unitary = frozenset(unitary)
        self._owner = owner
        self.operator_bound = float(max((s.operator_bound for s in self.marginals), default=1.0))

    def _adjoint_allowed(self, i, j):
        b, local = self._owner[i]
        return self.marginals[b]._adjoint_allowed(local, j)

    def _split(self, word):
        blocks = []
        for (i, j, adj) in word:
            b, local = self._owner[i]
            blocks.append((b, ((local, j, adj),)))
        return _merge_blocks(blocks)

    def _moment(self, word):
        return self._rec(tuple(self._split(word)), 0, len(word) ** 2 + 1)

    def _block_moment(self, b, w):
        spec = self.marginals[b]
        key = (b, w)
        hit = self.cache.get(key)
        if hit is None:
            hit = spec.moment(w)
            self.cache[key] = hit
        return hit

    def _rec(self, blocks, depth, limit):
        if depth > limit:
            raise RuntimeError("free-product recursion exceeded its depth bound")
        blocks = list(blocks)
        if len(blocks) > 1 and blocks[0][0] == blocks[-1][0]:
            # rotate the last block to the front (traciality)
            b, w = blocks.pop()
            blocks[0] = (b, w + blocks[0][1])
        if not blocks:
            return 1.0
        if len(blocks) == 1:
            return self._block_moment(*blocks[0])
        key = ("rec",) + tuple(blocks)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        r = len(blocks)
        means = [self._block_moment(b, w) for b, w in blocks]
        total = 0.0
        for size in range(r):
            sign = -((-1) ** (r - size))
            for keep in itertools.combinations(range(r), size):
                coef = 1.0
                for j in range(r):
                    if j not in keep:
                        coef *= means[j]
                if coef == 0:
                    continue
                sub = _merge_blocks([blocks[j] for j in keep])
                total += sign * coef * self._rec(tuple(sub), depth + 1, limit)
        self.cache[key] = total
        return total


def free_product_moment(marginals, word):
    """Moment of ``word`` in the free product of ``marginals``."""
    return FreeProduct(list(marginals)).moment(word)


@dataclass(eq=False)
class Identical(TracialSpec):
    """``n`` families that are all the same single-family variable tuple."""

    base: TracialSpec
    n: int
    kind = "identical"

    def __post_init__(self):
        if self.base.n_families != 1:
            raise InvalidParameterError("identical spec needs a single-family base")
        self.family_sizes = self.base.family_sizes * self.n
        self.unitary = frozenset((i, j) for i in range(self.n) for (_, j) in self.base.unitary)
        self.operator_bound = self.base.operator_bound

    def _adjoint_allowed(self, i, j):
        return self.base._adjoint_allowed(0, j)

    def _moment(self, word):
        return self.base.moment(tuple((0, j, adj) for (_, j, adj) in word))


@dataclass(eq=False)
class Liberated(TracialSpec):
    """Joint law of ``(v_i X_i v_i^*)_i`` together with the unitaries ``v_i``.

    ``base`` is the joint law of the families ``X_1..X_n``; ``unitaries[i]``
    is a single-unitary law for ``v_i``.  The ``v_i`` are free from each other
    and from the ``X``'s.  Families ``0..n-1`` of this spec are the rotated
    ``X``'s, families ``n..2n-1`` the unitaries.
    """

    base: TracialSpec
    unitaries: list
    kind = "liberated"
    _adjoint_ok = False

    def __post_init__(self):
        n = self.base.n_families
        if len(self.unitaries) != n:
            raise InvalidParameterError(f"need {n} unitary laws, got {len(self.unitaries)}")
        for u in self.unitaries:
            if u.family_sizes != (1,) or (0, 0) not in u.unitary:
                raise InvalidParameterError("each unitary law must be a single unitary letter")
        self._inner = FreeProduct([self.base] + list(self.unitaries))
        self.family_sizes = self.base.family_sizes + (1,) * n
        self.unitary = frozenset((n + i, 0) for i in range(n))
        self.operator_bound = self.base.operator_bound

    def _adjoint_allowed(self, i, j):
        n = self.base.n_families
        return i >= n or self.base._adjoint_allowed(i, j)

    def _moment(self, word):
        n = self.base.n_families
        expanded = []
        for (i, j, adj) in word:
            if i < n:
                expanded += [(n + i, 0, False), (i, j, adj), (n + i, 0, True)]
            else:
                expanded.append((i, 0, adj))
        return self._inner.moment(tuple(expanded))


def moment(spec, word):
    return spec.moment(word)


def mf_free_deviation(families, m, budget=DEFAULT_WORD_BUDGET):
    """Smallest ``eps`` for which the families are ``(m, eps)``-free.

    Maximum over all words of length ``1..m`` (letters drawn from every
    family, in any order) of ``|tr_N(word) - free-product prediction|`` where
    the prediction uses each family's own matrix moments.
    """
    if m < 1:
        raise InvalidParameterError(f"m must be >= 1, got {m}")
    fams = []
    for fam in families:
        if isinstance(fam, np.ndarray) and fam.ndim == 2:
            fam = [fam]
        fams.append([np.asarray(x, dtype=complex) for x in fam])
    mats, letters = [], []
    for i, fam in enumerate(fams):
        for j, x in enumerate(fam):
            mats.append(x)
            letters.append((i, j, False))
    n = {x.shape for x in mats}
    if len(n) != 1:
        raise DimensionMismatchError(f"families have differing shapes {sorted(n)}")
    total = count_words(len(mats), m)
    if total > budget:
        raise BudgetExceededError(f"{total} words exceed the budget of {budget}", count=total)
    free = FreeProduct([MatrixModel([fam]) for fam in fams])
    worst = 0.0
    for idx, val in iter_word_traces(mats, m):
        pred = free.moment(tuple(letters[a] for a in idx))
        worst = max(worst, abs(val - pred))
    return float(worst)


# --- JSON serialization ---------------------------------------------------

def _mat_to_json(x):
    x = np.asarray(x, dtype=complex)
    return {"re": x.real.tolist(), "im": x.imag.tolist()}


def _mat_from_json(d):
    return np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)


def _spec_payload(spec):
    if isinstance(spec, MatrixModel):
        params = {
            "families": [[_mat_to_json(x) for x in fam] for fam in spec.families],
            "unitary": sorted([list(p) for p in spec.unitary]),
        }
    elif isinstance(spec, Semicircular):
        params = {}
    elif isinstance(spec, Projection):
        params = {"alpha": spec.alpha}
    elif isinstance(spec, FiniteAtoms):
        params = {"values": list(spec.values), "weights": list(spec.weights)}
    elif isinstance(spec, HaarUnitaryLaw):
        params = {}
    elif isinstance(spec, FreeProduct):
        params = {"marginals": [_spec_payload(s) for s in spec.marginals]}
    elif isinstance(spec, Identical):
        params = {"base": _spec_payload(spec.base), "n": spec.n}
    elif isinstance(spec, Liberated):
        params = {"base": _spec_payload(spec.base), "unitaries": [_spec_payload(u) for u in spec.unitaries]}
    else:
        raise InvalidParameterError(f"cannot serialize {type(spec).__name__}")
    return {"kind": spec.kind, "params": params, "operator_bound": spec.operator_bound}


def _spec_from_payload(d):
    kind, p = d["kind"], d.get("params", {})
    if kind == "matrix-model":
        fams = [[_mat_from_json(x) for x in fam] for fam in p["families"]]
        return MatrixModel(fams, frozenset(tuple(u) for u in p.get("unitary", [])))
    if kind == "semicircular":
        return Semicircular()
    if kind == "projection":
        return Projection(float(p["alpha"]))
    if kind == "finite-atoms":
        return FiniteAtoms(tuple(p["values"]), tuple(p["weights"]))
    if kind == "haar-unitary":
        return HaarUnitaryLaw()
    if kind == "free-product":
        return FreeProduct([_spec_from_payload(s) for s in p["marginals"]])
    if kind == "identical":
        return Identical(_spec_from_payload(p["base"]), int(p["n"]))
    if kind == "liberated":
        return Liberated(_spec_from_payload(p["base"]), [_spec_from_payload(u) for u in p["unitaries"]])
    raise InvalidParameterError(f"unknown tracial spec kind {kind!r}")


def spec_to_json(spec):
    doc = {"schema": SCHEMA}
    doc.update(_spec_payload(spec))
    return json.dumps(doc, sort_keys=True)


def spec_from_json(text):
    doc = json.loads(text) if isinstance(text, str) else text
    if doc.get("schema") != SCHEMA:
        raise InvalidParameterError(f"expected schema {SCHEMA!r}, got {doc.get('schema')!r}")
    return _spec_from_payload(doc)


def real_moment(spec, word):
    """Moment of a word whose value must be real; asserts the imaginary part."""
    val = spec.moment(word)
    if abs(val.imag) > TOL.imag_moment * max(1.0, abs(val)):
        raise ArithmeticError(f"moment of {word} has imaginary part {val.imag:.3e}")
    return val.real


def family_marginal(spec, i):
    """Single-family law of family ``i`` of a joint spec.

    Catalog laws are returned as themselves so that reference microstates can
    be built from them.
    """
    if not 0 <= i < spec.n_families:
        raise InvalidParameterError(f"family {i} out of range for {spec.kind}")
    if isinstance(spec, FreeProduct):
        b, local = spec._owner[i]
        return family_marginal(spec.marginals[b], local)
    if isinstance(spec, Identical):
        return spec.base
    if isinstance(spec, Liberated):
        n = spec.base.n_families
        return family_marginal(spec.base, i) if i < n else spec.unitaries[i - n]
    if isinstance(spec, MatrixModel):
        if spec.n_families == 1:
            return spec
        fam = spec.families[i]
        uv = frozenset((0, j) for (k, j) in spec.unitary if k == i)
        return MatrixModel([fam], uv)
    if spec.n_families == 1:
        return spec
    raise InvalidParameterError(f"cannot take a marginal of {spec.kind}")
