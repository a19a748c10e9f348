import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbilab.errors import InvalidParameterError
from orbilab.linalg import (
    eigh,
    expi_hermitian_batch,
    is_unitary,
    norm,
    polar_unitary,
    reconstruct,
    unitary_exp,
)
from orbilab.sampling import haar_unitary

from conftest import random_hermitian

seeds = st.integers(0, 2**31 - 1)
dims = st.integers(1, 12)


def test_eigh_identity():
    d, u = eigh(np.eye(3))
    assert np.allclose(d, [1, 1, 1])
    assert np.linalg.norm(reconstruct(d, u) - np.eye(3)) < 1e-12


def test_eigh_sorts_descending():
    d, _ = eigh(np.diag([1.0, 3.0]))
    assert d.tolist() == [3.0, 1.0]


def test_eigh_random_roundtrip(gen):
    a = random_hermitian(16, gen)
    d, u = eigh(a)
    assert np.linalg.norm(reconstruct(d, u) - a) < 1e-10
    assert is_unitary(u)


@pytest.mark.parametrize("bad", [np.array([[0, 1], [0, 0]]), np.ones((2, 3))])
def test_eigh_rejects_non_hermitian(bad):
    with pytest.raises(InvalidParameterError):
        eigh(bad)


@given(seeds, dims)
def test_eigh_conjugation_invariant_spectrum(seed, n):
    g = np.random.default_rng(seed)
    a = random_hermitian(n, g)
    v = haar_unitary(n, "U", g)
    d1, _ = eigh(a)
    d2, _ = eigh(v @ a @ v.conj().T)
    assert np.allclose(d1, d2, atol=1e-9)
    assert np.all(np.diff(d1) <= 0)


@pytest.mark.parametrize("n", [1, 2, 7])
@pytest.mark.parametrize("p", [1.0, 2.0, 3.5])
def test_identity_tracial_norm_is_one(n, p):
    assert norm(np.eye(n), "p-tracial", p) == pytest.approx(1.0)


def test_named_norm_examples():
    assert norm(np.diag([3.0, -4.0]), "operator") == pytest.approx(4.0)
    assert norm(np.diag([1.0, -1.0]), "p-tracial", 2) == pytest.approx(1.0)
    assert norm(np.diag([3.0, 4.0]), "hilbert-schmidt") == pytest.approx(5.0)


def test_norm_rejects_small_p():
    with pytest.raises(InvalidParameterError):
        norm(np.eye(2), "p-tracial", 0.5)


def test_norm_monotone_in_p(gen):
    for _ in range(100):
        a = random_hermitian(int(gen.integers(1, 9)), gen)
        n1 = norm(a, "p-tracial", 1)
        n2 = norm(a, "p-tracial", 2)
        n4 = norm(a, "p-tracial", 4)
        op = norm(a, "operator")
        assert n1 <= n2 + 1e-12 <= n4 + 2e-12 <= op + 3e-12


def test_unitary_exp_examples(gen):
    assert np.allclose(unitary_exp(np.zeros((3, 3))), np.eye(3))
    assert np.allclose(unitary_exp(np.diag([np.pi, 0.0])), np.diag([-1, 1]))
    u = unitary_exp(random_hermitian(8, gen))
    assert np.linalg.norm(u.conj().T @ u - np.eye(8), 2) < 1e-12


@given(seeds, st.floats(1e-4, 20.0))
def test_batched_exponential_matches_eigh_route(seed, scale):
    g = np.random.default_rng(seed)
    h = np.stack([random_hermitian(5, g, scale) for _ in range(3)])
    got = expi_hermitian_batch(h)
    want = np.stack([unitary_exp(x) for x in h])
    assert np.max(np.abs(got - want)) < 1e-11 * max(1.0, scale)


def test_polar_unitary_repairs_small_defect(gen):
    u = haar_unitary(6, "U", gen)
    x = u + 1e-4 * (gen.standard_normal((6, 6)) + 1j * gen.standard_normal((6, 6)))
    assert is_unitary(polar_unitary(x), 1e-10)
