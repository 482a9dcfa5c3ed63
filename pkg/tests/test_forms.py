"""Exterior algebra invariants, with a brute-force Hodge oracle built
from the defining property b ^ *a = <b, a> vol."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from g2lab.forms import (
    DIM,
    FormError,
    KForm,
    LieValuedKForm,
    MetricTensor,
    basis_form,
    complement,
    hodge,
    hodge_lie,
    index_sets,
    interior,
    load_form,
    pullback,
    pullback_metric,
    rep_derivative,
    save_form,
    wedge,
    wedge_lie_scalar,
)


def perm_sign(seq):
    """Parity of the permutation sorting seq, via explicit inversions."""
    inv = sum(
        1
        for i in range(len(seq))
        for j in range(i + 1, len(seq))
        if seq[i] > seq[j]
    )
    return -1 if inv % 2 else 1


def gram(g_inv, idx_a, idx_b):
    return np.linalg.det(g_inv[np.ix_(idx_a, idx_b)])


def oracle_star(g: MetricTensor, a: KForm) -> KForm:
    """Solve b ^ *a = <b, a>_g vol over all basis b, independently of the
    library's Hodge implementation."""
    k = a.degree
    g_inv = np.linalg.inv(g.entries)
    vol = np.sqrt(np.linalg.det(g.entries))
    rows = index_sets(k)
    cols = index_sets(DIM - k)
    W = np.zeros((len(rows), len(cols)))
    for i, I in enumerate(rows):
        for j, J in enumerate(cols):
            if set(I) & set(J):
                continue
            W[i, j] = perm_sign(I + J)
    rhs = np.array(
        [sum(gram(g_inv, I, K) * a.coeffs[m] for m, K in enumerate(rows)) * vol
         for I in rows]
    )
    coeffs = np.linalg.solve(W, rhs) if W.shape[0] == W.shape[1] else None
    assert coeffs is not None
    return KForm(DIM - k, coeffs)


def random_metric(rng):
    A = rng.standard_normal((DIM, DIM))
    return MetricTensor(A @ A.T + DIM * np.eye(DIM))


def random_form(rng, k):
    return KForm(k, rng.standard_normal(len(index_sets(k))))


# ---------------------------------------------------------------------------
# wedge


def test_wedge_basis_sign():
    d1, d2 = basis_form((0,)), basis_form((1,))
    assert np.allclose(wedge(d1, d2).coeffs, basis_form((0, 1)).coeffs)
    assert np.allclose(wedge(d2, d1).coeffs, -basis_form((0, 1)).coeffs)


def test_wedge_brute_force_oracle():
    """Compare against a permutation-expansion wedge on random 2x3 forms."""
    rng = np.random.default_rng(0)
    a = random_form(rng, 2)
    b = random_form(rng, 3)
    got = wedge(a, b)
    expect = np.zeros(len(index_sets(5)))
    pos5 = {idx: n for n, idx in enumerate(index_sets(5))}
    for I, ca in zip(index_sets(2), a.coeffs):
        for J, cb in zip(index_sets(3), b.coeffs):
            if set(I) & set(J):
                continue
            expect[pos5[tuple(sorted(I + J))]] += ca * cb * perm_sign(I + J)
    assert np.allclose(got.coeffs, expect, atol=1e-13)


def test_wedge_degree_overflow():
    rng = np.random.default_rng(1)
    with pytest.raises(FormError):
        wedge(random_form(rng, 4), random_form(rng, 4))


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3))
@settings(max_examples=25, deadline=None)
def test_wedge_graded_commutativity(seed, k, l):
    rng = np.random.default_rng(seed)
    a, b = random_form(rng, k), random_form(rng, l)
    lhs = wedge(a, b)
    rhs = wedge(b, a)
    assert np.allclose(lhs.coeffs, (-1.0) ** (k * l) * rhs.coeffs, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_wedge_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_form(rng, k) for k in (1, 2, 3))
    lhs = wedge(wedge(a, b), c)
    rhs = wedge(a, wedge(b, c))
    assert np.allclose(lhs.coeffs, rhs.coeffs, atol=1e-12)


# ---------------------------------------------------------------------------
# hodge


def test_hodge_euclidean_basis():
    g = MetricTensor(np.eye(DIM))
    assert np.allclose(
        hodge(g, basis_form((0,))).coeffs,
        basis_form((1, 2, 3, 4, 5, 6)).coeffs,
    )
    assert np.allclose(
        hodge(g, KForm(0, np.ones(1))).coeffs, KForm(7, np.ones(1)).coeffs
    )


def test_hodge_matches_oracle_random_metrics():
    rng = np.random.default_rng(2)
    for _ in range(10):
        g = random_metric(rng)
        for k in range(1, 4):
            a = random_form(rng, k)
            got = hodge(g, a)
            expect = oracle_star(g, a)
            assert np.allclose(got.coeffs, expect.coeffs, rtol=1e-9,
                               atol=1e-9 * expect.norm())


def test_hodge_conformal_scaling_k1():
    g = MetricTensor(np.eye(DIM))
    g4 = MetricTensor(4.0 * np.eye(DIM))
    a = basis_form((0,))
    assert np.allclose(hodge(g4, a).coeffs, 2.0**5 * hodge(g, a).coeffs)


@given(st.integers(0, 2**32 - 1), st.integers(0, 7))
@settings(max_examples=30, deadline=None)
def test_double_hodge_identity(seed, k):
    rng = np.random.default_rng(seed)
    g = random_metric(rng)
    a = random_form(rng, k)
    back = hodge(g, hodge(g, a))
    assert np.allclose(back.coeffs, a.coeffs, rtol=1e-9, atol=1e-9 * a.norm())


def test_hodge_rejects_non_spd():
    with pytest.raises(FormError):
        hodge(MetricTensor(-np.eye(DIM)), basis_form((0,)))


def test_metric_rejects_asymmetric():
    M = np.eye(DIM)
    M[0, 1] = 0.5
    with pytest.raises(FormError):
        MetricTensor(M)


# ---------------------------------------------------------------------------
# interior


def test_interior_examples():
    assert np.allclose(
        interior(np.eye(DIM)[0], basis_form((0, 1, 2))).coeffs,
        basis_form((1, 2)).coeffs,
    )
    assert np.allclose(
        interior(np.eye(DIM)[1], basis_form((0, 1, 2))).coeffs,
        -basis_form((0, 2)).coeffs,
    )


def test_interior_phi0_e4():
    # phi0 terms containing index 4: -dy^145, -dy^246, -dy^347; contracting
    # e4 in the middle slot flips each sign once
    from g2lab.g2 import euclidean_phi

    got = interior(np.eye(DIM)[3], euclidean_phi())
    expect = basis_form((0, 4)) + basis_form((1, 5)) + basis_form((2, 6))
    assert np.allclose(got.coeffs, expect.coeffs)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_interior_antiderivation(seed):
    rng = np.random.default_rng(seed)
    a, b = random_form(rng, 2), random_form(rng, 3)
    v = rng.standard_normal(DIM)
    lhs = interior(v, wedge(a, b))
    rhs = wedge(interior(v, a), b) + wedge(a, interior(v, b))
    assert np.allclose(lhs.coeffs, rhs.coeffs, atol=1e-11)


def test_interior_squares_to_zero():
    rng = np.random.default_rng(3)
    a = random_form(rng, 3)
    v = rng.standard_normal(DIM)
    assert interior(v, interior(v, a)).norm() < 1e-12


# ---------------------------------------------------------------------------
# pullback


def test_pullback_scaling_degrees():
    rng = np.random.default_rng(4)
    lam = 1.7
    for k, power in ((3, 3), (4, 4)):
        a = random_form(rng, k)
        got = pullback(lam * np.eye(DIM), a)
        assert np.allclose(got.coeffs, lam**power * a.coeffs)


@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
@settings(max_examples=20, deadline=None)
def test_pullback_functorial(seed, k):
    rng = np.random.default_rng(seed)
    a = random_form(rng, k)
    M = rng.standard_normal((DIM, DIM)) + 2 * np.eye(DIM)
    N = rng.standard_normal((DIM, DIM)) + 2 * np.eye(DIM)
    lhs = pullback(M @ N, a)
    rhs = pullback(N, pullback(M, a))
    assert np.allclose(lhs.coeffs, rhs.coeffs,
                       rtol=1e-9, atol=1e-9 * max(1.0, lhs.norm()))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_pullback_commutes_with_wedge(seed):
    rng = np.random.default_rng(seed)
    a, b = random_form(rng, 2), random_form(rng, 2)
    M = rng.standard_normal((DIM, DIM)) + 2 * np.eye(DIM)
    lhs = pullback(M, wedge(a, b))
    rhs = wedge(pullback(M, a), pullback(M, b))
    assert np.allclose(lhs.coeffs, rhs.coeffs,
                       rtol=1e-9, atol=1e-9 * max(1.0, lhs.norm()))


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
@settings(max_examples=20, deadline=None)
def test_hodge_covariance_under_pullback(seed, k):
    rng = np.random.default_rng(seed)
    a = random_form(rng, k)
    g = random_metric(rng)
    M = rng.standard_normal((DIM, DIM)) + 2 * np.eye(DIM)
    if np.linalg.det(M) < 0:
        M[:, 0] *= -1.0
    lhs = pullback(M, hodge(g, a))
    rhs = hodge(pullback_metric(M, g), pullback(M, a))
    assert np.allclose(lhs.coeffs, rhs.coeffs,
                       rtol=1e-8, atol=1e-8 * max(1.0, lhs.norm()))


def test_pullback_rejects_singular():
    M = np.zeros((DIM, DIM))
    with pytest.raises(FormError):
        pullback(M, basis_form((0,)))


def test_rep_derivative_matches_flow():
    from scipy.linalg import expm

    rng = np.random.default_rng(5)
    A = rng.standard_normal((DIM, DIM))
    X = A - A.T
    a = random_form(rng, 3)
    h = 1e-6
    fd = (
        pullback(expm(h * X), a).coeffs - pullback(expm(-h * X), a).coeffs
    ) / (2 * h)
    assert np.allclose(rep_derivative(X, 3) @ a.coeffs, fd, atol=1e-8)


# ---------------------------------------------------------------------------
# Lie-valued wrappers


def test_lie_valued_antisymmetry_enforced():
    bad = np.zeros((len(index_sets(2)), 2, 2))
    bad[0] = [[0.0, 1.0], [1.0, 0.0]]
    with pytest.raises(FormError):
        LieValuedKForm(2, bad)


def test_wedge_lie_scalar_componentwise():
    rng = np.random.default_rng(6)
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    scal = random_form(rng, 2)
    b = random_form(rng, 4)
    lie = LieValuedKForm(2, scal.coeffs[:, None, None] * J)
    got = wedge_lie_scalar(lie, b)
    expect = wedge(scal, b)
    assert np.allclose(got.coeffs, expect.coeffs[:, None, None] * J, atol=1e-12)


def test_hodge_lie_componentwise():
    rng = np.random.default_rng(7)
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    g = random_metric(rng)
    scal = random_form(rng, 1)
    lie = LieValuedKForm(1, scal.coeffs[:, None, None] * J)
    got = hodge_lie(g, lie)
    expect = hodge(g, scal)
    assert np.allclose(got.coeffs, expect.coeffs[:, None, None] * J, atol=1e-10)


# ---------------------------------------------------------------------------
# misc


def test_complement_partition():
    for k in range(8):
        for idx in index_sets(k):
            assert tuple(sorted(idx + complement(idx))) == tuple(range(DIM))


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    a = random_form(rng, 3)
    path = tmp_path / "form.txt"
    save_form(a, path)
    back = load_form(path)
    assert back.degree == 3
    assert np.allclose(back.coeffs, a.coeffs)
