"""Dense complex matrix kernel.

Eigenvalues are always returned in non-increasing order, i.e. as an element of
the closed Weyl chamber ``x_1 >= x_2 >= ... >= x_N``.  Norms follow the
normalized-trace convention ``tr_N = Tr / N`` unless the name says otherwise.
"""
from __future__ import annotations

import numpy as np

from .config import TOL
from .errors import EigenSolverError, InvalidParameterError

__all__ = [
    "is_hermitian",
    "is_unitary",
    "check_hermitian",
    "eigh",
    "reconstruct",
    "norm",
    "tr",
    "dagger",
    "unitary_exp",
    "expi_hermitian_batch",
    "polar_unitary",
]


def dagger(a):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def tr(a):
    """Normalized trace ``tr_N`` over the last two axes."""
    a = np.asarray(a)
    return np.trace(a, axis1=-2, axis2=-1) / a.shape[-1]


def is_hermitian(a, tol=None):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    tol = TOL.hermitian if tol is None else tol
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


def is_unitary(u, tol=None):
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    tol = TOL.unitary if tol is None else tol
    defect = u.conj().T @ u - np.eye(u.shape[0])
    return bool(np.linalg.norm(defect, 2) <= tol)


def check_hermitian(a, name="A"):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidParameterError(f"{name} must be square, got shape {a.shape}")
    if not is_hermitian(a):
        err = np.max(np.abs(a - a.conj().T))
        raise InvalidParameterError(f"{name} is not Hermitian (max |A - A^*| = {err:.3e})")
    return a


def eigh(a):
    """Diagonalize a Hermitian matrix as ``A = U diag(D) U^*``.

    Parameters
    ----------
    a : (N, N) array_like
        Hermitian matrix.

    Returns
    -------
    D : (N,) ndarray
        Spectrum sorted non-increasing.  Ties keep the solver's order.
    U : (N, N) ndarray
        Unitary whose columns are the matching eigenvectors.  Any choice
        within a degenerate eigenspace is as good as any other.

    Raises
    ------
    EigenSolverError
        If LAPACK fails or the reconstruction residual is out of tolerance.
    """
    a = check_hermitian(a)
    n = a.shape[0]
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"eigh did not converge for N={n}: {exc}") from exc
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    scale = max(1.0, float(np.linalg.norm(a)))
    residual = float(np.linalg.norm(reconstruct(w, v) - a))
    if not np.isfinite(residual) or residual > TOL.reconstruction * scale:
        raise EigenSolverError(
            f"eigh reconstruction failed for N={n}: residual {residual:.3e}"
        )
    return w, v


def reconstruct(d, u):
    """``U diag(d) U^*``."""
    return (u * d) @ u.conj().T


def norm(a, kind="operator", p=2.0):
    """Matrix norm.

    ``kind`` is one of ``"operator"``, ``"hilbert-schmidt"`` (non-normalized
    Frobenius) or ``"p-tracial"`` which returns ``tr_N(|a|^p)^(1/p)``.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidParameterError(f"norm needs a square matrix, got {a.shape}")
    if kind == "operator":
        return float(np.linalg.norm(a, 2)) if a.size else 0.0
    if kind in ("hilbert-schmidt", "hs"):
        return float(np.linalg.norm(a))
    if kind in ("p-tracial", "p"):
        if not p >= 1:
            raise InvalidParameterError(f"p-tracial norm needs p >= 1, got {p}")
        s = np.linalg.svd(a, compute_uv=False)
        return float(np.mean(s**p) ** (1.0 / p))
    raise InvalidParameterError(f"unknown norm kind {kind!r}")


def unitary_exp(h):
    """Return ``exp(iH)`` for Hermitian ``H``."""
    h = check_hermitian(h, "H")
    w, v = np.linalg.eigh(h)
    if not np.all(np.isfinite(w)):
        raise EigenSolverError(f"non-finite spectrum in unitary_exp (N={h.shape[0]})")
    u = (v * np.exp(1j * w)) @ v.conj().T
    if not is_unitary(u):
        raise EigenSolverError(
            f"exp(iH) lost unitarity for N={h.shape[0]}, ||H||={np.max(np.abs(w)):.3e}"
        )
    return u


def _norm_estimate(h, iters=6):
    # power iteration on h^2, inflated by a safety factor and capped by Gershgorin
    gersh = float(np.max(np.sum(np.abs(h), axis=-1), initial=0.0))
    if gersh == 0.0:
        return 0.0
    n = h.shape[-1]
    v = np.broadcast_to(np.linspace(1.0, 2.0, n) + 0.3j * np.cos(np.arange(n)), h.shape[:-1]).copy()
    v = v[..., None]
    lam = 0.0
    for _ in range(iters):
        w = h @ v
        nv = np.linalg.norm(w, axis=-2, keepdims=True)
        lam = float(np.max(nv / np.maximum(np.linalg.norm(v, axis=-2, keepdims=True), 1e-300)))
        v = w / np.maximum(nv, 1e-300)
    return min(gersh, 1.5 * lam)


def expi_hermitian_batch(h, tol=1e-15):
    """Batched ``exp(iH)`` by Taylor series with Paterson-Stockmeyer grouping.

    Built for small Hermitian increments where an eigendecomposition per
    matrix would dominate the cost.  A power-iteration estimate of ``||H||``
    (capped by the Gershgorin bound) picks the degree; large inputs are
    scaled and squared.
    """
    h = np.asarray(h)
    theta = _norm_estimate(h)
    squarings = 0
    while theta > 0.5:
        theta /= 2.0
        squarings += 1
    x = (1j / 2.0**squarings) * h
    degree = 1
    term = theta
    while term * np.exp(theta) > tol and degree < 40:
        degree += 1
        term *= theta / degree
    coeffs = [1.0]
    for k in range(1, degree + 1):
        coeffs.append(coeffs[-1] / k)
    block = max(1, int(np.ceil(np.sqrt(degree + 1))))
    n = h.shape[-1]
    idx = np.arange(n)
    powers = [None, x]
    for _ in range(2, block + 1):
        powers.append(powers[-1] @ x)
    xs = powers[block]
    n_blocks = degree // block + 1
    out = None
    for b in reversed(range(n_blocks)):
        chunk = None
        for j in range(1, block):
            k = b * block + j
            if k <= degree:
                chunk = coeffs[k] * powers[j] if chunk is None else chunk + coeffs[k] * powers[j]
        if chunk is None:
            chunk = np.zeros_like(x)
        chunk[..., idx, idx] += coeffs[b * block]
        out = chunk if out is None else out @ xs + chunk
    for _ in range(squarings):
        out = out @ out
    return out


def polar_unitary(x, max_iter=8, tol=1e-11):
    """Unitary polar factor of nearly-unitary matrices (batched Newton-Schulz).

    Each sweep maps an entrywise defect ``d`` of ``X^*X - I`` to roughly
    ``0.75 d^2``; iteration stops once the predicted defect is below ``tol``.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    eye = np.eye(n)
    for _ in range(max_iter):
        g = dagger(x) @ x
        defect = float(np.max(np.abs(g - eye)))
        if defect >= 0.5:
            raise EigenSolverError(f"polar retraction diverges: defect {defect:.3e}")
        if defect < tol:
            break
        x = x @ (1.5 * eye - 0.5 * g)
        if 0.75 * defect * defect < tol:
            break
    return x
