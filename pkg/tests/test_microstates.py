import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from orbilab.errors import DimensionMismatchError, InsufficientSamplesError, InvalidParameterError
from orbilab.microstates import (
    ESTIMATE_COLUMNS,
    MicrostateParams,
    align_conjugation,
    delta_set_contains,
    estimate_orbital_measure,
    gamma_orb_contains,
    reference_microstate,
    reference_tuple,
)
from orbilab.ncalg import FiniteAtoms, FreeProduct, Identical, Projection, Semicircular
from orbilab.sampling import RngStream, haar_unitary, haar_unitary_batch

from conftest import random_hermitian

FREE = FreeProduct([Projection(0.5), Projection(0.5)])
SAME = Identical(Projection(0.5), 2)


@pytest.mark.parametrize("kw", [dict(N=0, m=1, delta=0.1), dict(N=2, m=0, delta=0.1),
                                dict(N=2, m=1, delta=0.0), dict(N=2, m=1, delta=0.1, R=-1.0)])
def test_params_validated(kw):
    with pytest.raises(InvalidParameterError):
        MicrostateParams(**kw)


def test_delta_set_exact_model():
    spec = FiniteAtoms((1.0, -1.0, 0.0), (0.25, 0.25, 0.5))
    d = np.diag(reference_microstate(spec, 8)[0]).real
    assert delta_set_contains(d, spec, MicrostateParams(8, 6, 1e-9))


def test_delta_set_cutoff_and_shift():
    spec = FiniteAtoms((1.0, -1.0), (0.5, 0.5))
    d = np.array([1.0, -1.0, 1.0, -1.0])
    assert not delta_set_contains(d, spec, MicrostateParams(4, 2, 0.5, R=0.9))
    assert not delta_set_contains(d + 0.2, spec, MicrostateParams(4, 1, 0.1))


def test_single_family_every_unitary_is_a_hit():
    spec = Semicircular()
    xi = reference_tuple(spec, 40)
    est = estimate_orbital_measure(spec, xi, MicrostateParams(40, 4, 0.1), 100, RngStream(1))
    assert est.hit_fraction == 1.0
    assert est.log_measure_per_N2 == 0.0


def test_identical_targets_coinciding_rotations():
    xi = [[np.diag([1.0, 0.0])], [np.diag([1.0, 0.0])]]
    u = haar_unitary(2, "U", RngStream(2))
    assert gamma_orb_contains([u, u], xi, SAME, MicrostateParams(2, 6, 1e-9))


def test_identical_targets_flip_breaks_xy():
    xi = [[np.diag([1.0, 0.0])], [np.diag([1.0, 0.0])]]
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert not gamma_orb_contains([np.eye(2), flip], xi, SAME, MicrostateParams(2, 2, 0.4))


def test_dimension_mismatch():
    xi = reference_tuple(FREE, 4)
    with pytest.raises(DimensionMismatchError):
        gamma_orb_contains([np.eye(3), np.eye(4)], xi, FREE, MicrostateParams(4, 2, 0.1))


def test_torus_right_invariance():
    n = 10
    xi = reference_tuple(FREE, n)
    p = MicrostateParams(n, 4, 0.02)
    s = RngStream(3)
    for k in range(30):
        U = haar_unitary_batch(n, 2, "U", s.substream(k, 0))
        T = haar_unitary_batch(n, 2, "T", s.substream(k, 1))
        a = gamma_orb_contains(list(U), xi, FREE, p)
        b = gamma_orb_contains([u @ t for u, t in zip(U, T)], xi, FREE, p)
        assert a == b


@given(st.integers(0, 2**31 - 1))
def test_gamma_sets_nested(seed):
    n = 6
    xi = reference_tuple(FREE, n)
    U = list(haar_unitary_batch(n, 2, "U", RngStream(seed)))
    wide = gamma_orb_contains(U, xi, FREE, MicrostateParams(n, 2, 0.2))
    narrow_delta = gamma_orb_contains(U, xi, FREE, MicrostateParams(n, 2, 0.05))
    more_words = gamma_orb_contains(U, xi, FREE, MicrostateParams(n, 4, 0.2))
    assert wide or not narrow_delta
    assert wide or not more_words


def test_estimate_validates_samples():
    with pytest.raises(InsufficientSamplesError):
        estimate_orbital_measure(FREE, reference_tuple(FREE, 4), MicrostateParams(4, 2, 0.1), 10, RngStream(0))


def test_estimate_row_schema():
    e = estimate_orbital_measure(FREE, reference_tuple(FREE, 8), MicrostateParams(8, 4, 0.02), 200, RngStream(4))
    row = e.row()
    assert list(row) == list(ESTIMATE_COLUMNS)
    lo, hi = e.wilson_interval
    assert lo <= e.hit_fraction <= hi
    assert e.log_measure_per_N2 == pytest.approx(math.log(e.hit_fraction) / 64)


def test_zero_hits_reported_with_bound():
    e = estimate_orbital_measure(SAME, reference_tuple(SAME, 30), MicrostateParams(30, 4, 0.1), 100, RngStream(5))
    assert e.hits == 0 and e.zero_hits
    assert e.log_measure_per_N2 == -math.inf
    assert e.upper_bound == pytest.approx(0.03)


@pytest.mark.parametrize("workers", [2, 3, 8])
def test_estimate_independent_of_workers(workers):
    xi = reference_tuple(FREE, 8)
    p = MicrostateParams(8, 4, 0.02)
    a = estimate_orbital_measure(FREE, xi, p, 120, RngStream(6), workers=1)
    b = estimate_orbital_measure(FREE, xi, p, 120, RngStream(6), workers=workers)
    assert a == b


def test_free_log_measure_shrinks_with_n():
    vals = []
    for n in (8, 12, 20, 40):
        e = estimate_orbital_measure(FREE, reference_tuple(FREE, n), MicrostateParams(n, 4, 0.01), 400, RngStream(7))
        vals.append(abs(e.log_measure_per_N2))
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_left_invariance_of_hit_distribution():
    n = 8
    xi = reference_tuple(FREE, n)
    p = MicrostateParams(n, 4, 0.02)
    W = haar_unitary_batch(n, 2, "U", RngStream(8, 1))
    s = RngStream(8, 2)
    plain, shifted = 0, 0
    trials = 600
    for k in range(trials):
        U = haar_unitary_batch(n, 2, "U", s.substream(k))
        V = haar_unitary_batch(n, 2, "U", s.substream(k + trials))
        plain += gamma_orb_contains(list(U), xi, FREE, p)
        shifted += gamma_orb_contains([w @ v for w, v in zip(W, V)], xi, FREE, p)
    table = [[plain, trials - plain], [shifted, trials - shifted]]
    assert stats.fisher_exact(table).pvalue > 0.01


def test_align_exact_conjugation(gen):
    A = [random_hermitian(5, gen), random_hermitian(5, gen)]
    V = haar_unitary(5, "U", gen)
    B = [V @ a @ V.conj().T for a in A]
    res = align_conjugation(A, B)
    assert res.residual < 1e-6


def test_align_single_pair_hoffman_wielandt(gen):
    a, b = random_hermitian(6, gen), random_hermitian(6, gen)
    res = align_conjugation([a], [b])
    hw = np.sqrt(np.mean((np.linalg.eigvalsh(a) - np.linalg.eigvalsh(b)) ** 2))
    assert res.residual == pytest.approx(hw, abs=1e-8)


def test_align_trace_obstruction(gen):
    a = random_hermitian(4, gen)
    b = random_hermitian(4, gen) + 0.7 * np.eye(4)
    res = align_conjugation([a], [b])
    assert res.residual >= abs(np.trace(a - b).real) / 4 - 1e-12
    assert res.residual <= res.initial_residual + 1e-12


def test_align_budget_flags_nonconvergence(gen):
    A = [random_hermitian(6, gen) for _ in range(3)]
    B = [random_hermitian(6, gen) for _ in range(3)]
    res = align_conjugation(A, B, budget=2)
    assert not res.converged
    assert res.iterations <= 2
