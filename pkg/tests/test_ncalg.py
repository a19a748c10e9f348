import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from orbilab.errors import BudgetExceededError, DimensionMismatchError, InvalidParameterError
from orbilab.ncalg import (
    FiniteAtoms,
    FreeProduct,
    HaarUnitaryLaw,
    Identical,
    Liberated,
    MatrixModel,
    Projection,
    Semicircular,
    eval_word,
    family_marginal,
    free_product_moment,
    iter_word_traces,
    letter,
    mf_free_deviation,
    spec_from_json,
    spec_to_json,
    word_from_string,
)
from orbilab.sampling import RngStream, haar_unitary

from conftest import random_hermitian

X, Y, Z = letter(0), letter(1), letter(2)


def _free_abab(ta, ta2, tb, tb2):
    # tau(a b a b) for free a, b: a standard closed form, independent of the recursion
    return ta2 * tb**2 + ta**2 * tb2 - ta**2 * tb**2


def test_empty_word_and_direct_trace():
    assert eval_word((), [[np.eye(2)]]) == 1
    assert eval_word((X, X), [[np.diag([1.0, 0.0])]]) == pytest.approx(0.5)


def test_eval_word_dimension_mismatch():
    with pytest.raises(DimensionMismatchError, match="letter 1"):
        eval_word((X, Y), [[np.eye(2)], [np.eye(3)]])


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_eval_word_cyclic(seed, k):
    g = np.random.default_rng(seed)
    mats = [[random_hermitian(4, g)], [haar_unitary(4, "U", g)]]
    word = tuple(letter(int(g.integers(2)), 0, bool(g.integers(2))) for _ in range(k))
    rotated = word[1:] + word[:1]
    assert abs(eval_word(word, mats) - eval_word(rotated, mats)) < 1e-12


@pytest.mark.parametrize("k, expected", [(1, 0), (2, 1), (3, 0), (4, 2), (6, 5), (8, 14)])
def test_semicircle_moments(k, expected):
    assert Semicircular().moment((X,) * k) == expected


@pytest.mark.parametrize("k", [2, 4, 6])
def test_semicircle_matches_quadrature(k):
    val, _ = integrate.quad(lambda t: t**k * np.sqrt(4 - t * t) / (2 * np.pi), -2, 2)
    assert Semicircular().moment((X,) * k).real == pytest.approx(val, abs=1e-9)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_projection_moments(k):
    assert Projection(0.3).moment((X,) * k) == pytest.approx(0.3)


def test_finite_atoms_and_haar():
    assert FiniteAtoms((1, -1), (0.5, 0.5)).moment((X, X)) == pytest.approx(1)
    u = HaarUnitaryLaw()
    assert u.moment((X, letter(0, 0, True))) == 1
    assert u.moment((X, X)) == 0


def test_adjoint_on_selfadjoint_catalog_rejected():
    with pytest.raises(InvalidParameterError):
        Semicircular().moment((letter(0, 0, True),))
    with pytest.raises(InvalidParameterError):
        FreeProduct([Projection(0.5), HaarUnitaryLaw()]).moment((letter(0, 0, True),))


def test_free_projections_pqpq():
    fp = FreeProduct([Projection(0.5), Projection(0.5)])
    assert fp.moment((X, Y, X, Y)) == pytest.approx(3 / 16, abs=1e-14)


@given(st.floats(0, 1), st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.floats(0.05, 0.95))
def test_free_abab_closed_form(beta, vals, w):
    a = FiniteAtoms(tuple(vals), (w, 1 - w))
    b = Projection(beta)
    fp = FreeProduct([a, b])
    ta, ta2 = a.moment((X,)).real, a.moment((X, X)).real
    assert fp.moment((X, Y, X, Y)).real == pytest.approx(_free_abab(ta, ta2, beta, beta), abs=1e-12)


def test_free_xy_factorizes():
    a, b = FiniteAtoms((2.0, -1.0), (0.25, 0.75)), Semicircular()
    fp = FreeProduct([a, b])
    assert fp.moment((X, Y)) == pytest.approx(a.moment((X,)) * b.moment((X,)))


def test_centered_alternating_word_vanishes():
    a, b = Projection(0.3), Projection(0.6)
    fp = FreeProduct([a, b])
    # tau((p-a)(q-b)(p-a)(q-b)) by multilinear expansion
    total = 0.0
    for mask in range(16):
        coef, word = 1.0, []
        for pos in range(4):
            take = mask >> pos & 1
            mean = 0.3 if pos % 2 == 0 else 0.6
            if take:
                word.append(X if pos % 2 == 0 else Y)
            else:
                coef *= -mean
        total += coef * fp.moment(tuple(word)).real
    assert abs(total) < 1e-14


def test_free_semicirculars_word():
    fp = FreeProduct([Semicircular(), Semicircular()])
    assert fp.moment((X, X, Y, Y, X, X)) == pytest.approx(2)
    assert fp.moment((X, Y, X, Y)) == pytest.approx(0)


def test_free_product_matches_large_random_matrices():
    # asymptotic freeness oracle: N = 400 Haar-rotated projections
    n = 400
    p = np.diag([1.0] * (n // 2) + [0.0] * (n // 2))
    u = haar_unitary(n, "U", RngStream(99))
    q = u @ p @ u.conj().T
    assert eval_word((X, Y, X, Y), [[p], [q]]).real == pytest.approx(3 / 16, abs=0.01)


words = st.lists(st.tuples(st.integers(0, 1), st.just(0), st.just(False)), min_size=1, max_size=6)


@given(words)
def test_free_product_tracial(word):
    fp = FreeProduct([Projection(0.3), FiniteAtoms((1.0, -2.0), (0.4, 0.6))])
    word = tuple(word)
    a = fp.moment(word)
    b = fp.moment(word[1:] + word[:1])
    assert abs(a - b) < 1e-10
    assert abs(a.imag) < 1e-10
    assert abs(a) <= fp.operator_bound ** len(word) + 1e-12


@given(st.lists(st.booleans(), min_size=1, max_size=6))
def test_unitary_words_tracial(adj):
    fp = FreeProduct([HaarUnitaryLaw(), Projection(0.5)])
    word = tuple(letter(k % 2, 0, a and k % 2 == 0) for k, a in enumerate(adj))
    assert abs(fp.moment(word) - fp.moment(word[1:] + word[:1])) < 1e-10


def test_single_family_free_product_reduces():
    s = Semicircular()
    for k in range(1, 7):
        assert FreeProduct([s]).moment((X,) * k) == s.moment((X,) * k)


def test_matrix_model_agrees_with_eval(gen):
    mats = [[random_hermitian(3, gen)], [random_hermitian(3, gen)]]
    mm = MatrixModel(mats)
    w = word_from_string("x0 x1 x1 x0 x1")
    assert mm.moment(w) == eval_word(w, mats)


def test_identical_spec_collapses_families():
    spec = Identical(Projection(0.5), 2)
    assert spec.moment((X, Y)) == pytest.approx(0.5)
    assert family_marginal(spec, 1).moment((X, X)) == pytest.approx(0.5)


def test_liberated_with_trivial_unitaries_is_base():
    base = Identical(Projection(0.5), 2)
    one = MatrixModel([[np.eye(1)]], frozenset({(0, 0)}))
    lib = Liberated(base, [one, one])
    assert lib.moment((X, Y, X, Y)) == pytest.approx(base.moment((X, Y, X, Y)))
    assert lib.moment((letter(2), letter(2, 0, True))) == pytest.approx(1)


def test_liberated_with_haar_unitaries_is_free():
    base = Identical(Projection(0.5), 2)
    lib = Liberated(base, [HaarUnitaryLaw(), HaarUnitaryLaw()])
    assert lib.moment((X, Y, X, Y)) == pytest.approx(3 / 16, abs=1e-12)


def test_iter_word_traces_matches_direct(gen):
    mats = [random_hermitian(5, gen), haar_unitary(5, "U", gen)]
    got = dict(iter_word_traces(mats, 5))
    assert len(got) == 2 + 4 + 8 + 16 + 32
    for idx, val in got.items():
        direct = eval_word(tuple(letter(a) for a in idx), [[mats[0]], [mats[1]]])
        assert abs(val - direct) < 1e-12


def test_scalar_family_has_zero_deviation(gen):
    a = random_hermitian(6, gen)
    assert mf_free_deviation([[a], [2.5 * np.eye(6)]], 4) < 1e-12


def test_identical_sign_matrices_far_from_free():
    d = np.diag([1.0, -1.0])
    assert mf_free_deviation([[d], [d]], 4) >= 1


def test_deviation_budget():
    with pytest.raises(BudgetExceededError) as err:
        mf_free_deviation([[np.eye(2)], [np.eye(2)]], 8, budget=100)
    assert err.value.count == sum(2**k for k in range(1, 9))


@pytest.mark.parametrize("spec", [
    Semicircular(), Projection(0.25), FiniteAtoms((0.0, 3.0), (0.5, 0.5)), HaarUnitaryLaw(),
    FreeProduct([Projection(0.5), Semicircular()]), Identical(Projection(0.5), 3),
    MatrixModel([[np.diag([1.0, 2.0])]]),
])
def test_json_roundtrip(spec):
    text = spec_to_json(spec)
    assert json.loads(text)["schema"] == "tracial-spec/1"
    back = spec_from_json(text)
    for w in [(X,), (X, X), (X, X, X)]:
        if spec.unitary:
            w = w[:1] + (letter(0, 0, True),)
        assert back.moment(w) == pytest.approx(spec.moment(w))


def test_free_product_moment_function():
    assert free_product_moment([Projection(0.5), Projection(0.5)], (X, Y)) == pytest.approx(0.25)
