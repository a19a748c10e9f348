"""Global numerical tolerances and conventions.

All modules read their thresholds from ``TOL`` so there is a single point of
calibration.
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12        # |A - A^*| entrywise, absolute
    unitary: float = 1e-10          # ||U^*U - I||_op
    reconstruction: float = 1e-9    # ||U D U^* - A||_HS relative to max(1, ||A||_HS)
    path_unitarity: float = 1e-8    # every stored FUBM point
    retraction_failure: float = 1e-6
    plan_marginal: float = 1e-9
    measure_weights: float = 1e-12
    imag_moment: float = 1e-10


TOL = Tolerances()

# Matrix Gaussian convention: E tr_N(A^2) = 1, semicircle of radius 2 in the limit.
GUE_NORMALIZATION = "gue: diag var 1/N, offdiag complex var 1/N; E tr_N(A^2)=1"
SDE_NORMALIZATION = "dU = i U dH - U dt/2, E tr_N(dH^2) = dt"

DEFAULT_SEED = 20070615
