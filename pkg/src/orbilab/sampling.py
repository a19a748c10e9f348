"""Seeded samplers: Haar unitaries, GUE, permutations.

Every sampler accepts either an :class:`RngStream` or a ready
``numpy.random.Generator``.  Passing the same ``RngStream`` twice reproduces
the same draw; loops that need fresh draws should pass a generator or use
:meth:`RngStream.substream`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InsufficientSamplesError, InvalidParameterError
from .linalg import eigh

__all__ = [
    "RngStream",
    "as_generator",
    "haar_unitary",
    "haar_unitary_batch",
    "gue",
    "gue_batch",
    "gue_from_normals",
    "uniform_permutation",
    "FactorizationReport",
    "check_factorization",
    "gue_pair_cells",
]


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: ``(master_seed, stream_index, path)``.

    Streams with different keys under the same seed are independent
    (``numpy.random.SeedSequence`` spawn keys); identical keys give
    bit-identical draws.
    """

    master_seed: int
    stream_index: int = 0
    path: tuple = field(default=())

    def __post_init__(self):
        if self.stream_index < 0 or any(p < 0 for p in self.path):
            raise InvalidParameterError("stream indices must be non-negative")

    def substream(self, *index):
        return RngStream(self.master_seed, self.stream_index, self.path + tuple(int(i) for i in index))

    def generator(self):
        seq = np.random.SeedSequence(
            int(self.master_seed) & ((1 << 64) - 1),
            spawn_key=(int(self.stream_index),) + self.path,
        )
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise InvalidParameterError(f"expected RngStream or Generator, got {type(rng).__name__}")


def _ginibre(gen, shape):
    return (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / np.sqrt(2.0)


def haar_unitary_batch(n, size, group="U", rng=None):
    """Draw ``size`` Haar matrices from ``U(n)``, ``SU(n)`` or the torus ``T(n)``.

    QR of a complex Ginibre matrix with the phases of ``diag(R)`` pushed into
    ``Q`` (Mezzadri's correction), which is exactly Haar on ``U(n)``.
    """
    if n < 1:
        raise InvalidParameterError(f"dimension must be >= 1, got {n}")
    gen = as_generator(rng)
    if group == "T":
        phases = np.exp(2j * np.pi * gen.random((size, n)))
        out = np.zeros((size, n, n), dtype=complex)
        idx = np.arange(n)
        out[:, idx, idx] = phases
        return out
    if group not in ("U", "SU"):
        raise InvalidParameterError(f"unknown group {group!r}")
    z = _ginibre(gen, (size, n, n))
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    q = q * (d / np.abs(d))[:, None, :]
    if group == "SU":
        det = np.linalg.det(q)
        q = q * np.exp(-1j * np.angle(det) / n)[:, None, None]
    return q


def haar_unitary(n, group="U", rng=None):
    """Single Haar draw; see :func:`haar_unitary_batch`."""
    return haar_unitary_batch(n, 1, group, rng)[0]


def gue_batch(n, size, rng=None):
    """GUE matrices normalized so that ``E tr_N(A^2) = 1``.

    Diagonal entries are real ``N(0, 1/n)``; off-diagonal entries have real and
    imaginary parts ``N(0, 1/(2n))``.
    """
    if n < 1:
        raise InvalidParameterError(f"dimension must be >= 1, got {n}")
    gen = as_generator(rng)
    return gue_from_normals(gen.standard_normal((size, n, n)))


def gue_from_normals(z):
    """Map i.i.d. standard normals of shape ``(..., n, n)`` to GUE matrices."""
    n = z.shape[-1]
    upper = np.triu(z, 1)
    lower = np.swapaxes(np.tril(z, -1), -1, -2)
    off = (upper + 1j * lower) / np.sqrt(2.0 * n)
    diag = np.diagonal(z, axis1=-2, axis2=-1) / np.sqrt(n)
    a = off + np.conj(np.swapaxes(off, -1, -2))
    idx = np.arange(n)
    a[..., idx, idx] = diag
    return a


def gue(n, rng=None):
    return gue_batch(n, 1, rng)[0]


def uniform_permutation(n, rng=None):
    """Uniform element of the symmetric group as a 0-based index array."""
    if n < 1:
        raise InvalidParameterError(f"size must be >= 1, got {n}")
    return as_generator(rng).permutation(n)


@dataclass(frozen=True)
class FactorizationReport:
    vandermonde_gof_pvalue: float | None
    eigenvector_invariance_pvalue: float
    sample_count: int
    chi2_statistic: float | None = None
    ks_statistic: float | None = None


def gue_pair_cells(n_s=8, n_d=8, n=2):
    """Cell edges that are equiprobable under the 2x2 GUE eigenvalue law.

    With ``s = x1 + x2`` and ``d = x1 - x2`` the density
    ``(x1-x2)^2 exp(-n (x1^2 + x2^2) / 2)`` factorizes into a centred normal
    for ``s`` with variance ``2/n`` and ``d sqrt(n/2) ~ chi(3)``.
    """
    qs = np.linspace(0.0, 1.0, n_s + 1)
    qd = np.linspace(0.0, 1.0, n_d + 1)
    s_edges = stats.norm.ppf(qs, scale=np.sqrt(2.0 / n))
    d_edges = stats.chi.ppf(qd, df=3) / np.sqrt(n / 2.0)
    return s_edges, d_edges


def _invariance_statistic(u):
    # torus-invariant: depends on |U_jk|^2 only
    n = u.shape[-1]
    w = np.linspace(-1.0, 1.0, n)
    return np.einsum("...jk,j,k->...", np.abs(u) ** 2, w, w)


def check_factorization(n, samples, rng=None, bins=8):
    """Statistical check of the eigen-factorization ``A = U D U^*`` of GUE.

    (a) For ``n == 2`` the ordered eigenvalue pairs are tested against the
    Vandermonde-weighted Gaussian density with a chi-square test on an
    equiprobable ``bins x bins`` grid in ``(x1 + x2, x1 - x2)``.
    (b) The eigenvector flag ``[U]`` is compared with fresh Haar draws by a
    two-sample Kolmogorov-Smirnov test on a torus-invariant statistic.
    """
    if samples < 1000:
        raise InsufficientSamplesError(f"check_factorization needs >= 1000 samples, got {samples}")
    if isinstance(rng, RngStream):
        gen_gue, gen_haar = rng.substream(0).generator(), rng.substream(1).generator()
    else:
        gen = as_generator(rng)
        gen_gue, gen_haar = gen, gen
    a = gue_batch(n, samples, gen_gue)

    chi2 = pval = None
    if n == 2:
        w = np.linalg.eigvalsh(a)[:, ::-1]
        s = w[:, 0] + w[:, 1]
        d = w[:, 0] - w[:, 1]
        s_edges, d_edges = gue_pair_cells(bins, bins, n)
        counts, _, _ = np.histogram2d(s, d, bins=[s_edges, d_edges])
        res = stats.chisquare(counts.ravel())
        chi2, pval = float(res.statistic), float(res.pvalue)

    vecs = np.empty_like(a)
    for k in range(samples):
        vecs[k] = eigh(a[k])[1]
    haar = haar_unitary_batch(n, samples, "U", gen_haar)
    ks = stats.ks_2samp(_invariance_statistic(vecs), _invariance_statistic(haar))
    return FactorizationReport(
        vandermonde_gof_pvalue=pval,
        eigenvector_invariance_pvalue=float(ks.pvalue),
        sample_count=samples,
        chi2_statistic=chi2,
        ks_statistic=float(ks.statistic),
    )
