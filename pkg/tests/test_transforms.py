import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unilab import transforms as tf
from unilab.errors import DimensionMismatch, NoConvergence, NonPowerOfTwo

from conftest import adjoint_gap


def dense_of(fn, n):
    return np.column_stack([fn(e) for e in np.eye(n)])


# fwht

def test_fwht_two_point():
    np.testing.assert_allclose(tf.fwht(np.array([1.0, 0.0])), [2 ** -0.5, 2 ** -0.5], atol=1e-15)


def test_fwht_involution(rng):
    v = rng.standard_normal(1024)
    assert np.max(np.abs(tf.fwht(tf.fwht(v)) - v)) <= 1e-12


def test_hadamard_entries_are_flat():
    H = dense_of(tf.fwht, 64)
    np.testing.assert_allclose(np.abs(H), 64 ** -0.5, atol=1e-15)
    assert np.max(np.abs(H)) == pytest.approx(64 ** -0.5, abs=1e-15)


def test_fwht_rejects_non_power_of_two():
    with pytest.raises(NonPowerOfTwo):
        tf.fwht(np.ones(12))


def test_fwht_does_not_modify_input(rng):
    v = rng.standard_normal(16)
    keep = v.copy()
    tf.fwht(v)
    np.testing.assert_array_equal(v, keep)


def test_fwht_matrix_columns():
    # Sylvester construction as an independent dense oracle
    H = np.array([[1.0]])
    for _ in range(4):
        H = np.block([[H, H], [H, -H]])
    np.testing.assert_allclose(dense_of(tf.fwht, 16), H / 4.0, atol=1e-15)


@given(st.integers(0, 10), st.integers(0, 2 ** 31 - 1))
def test_fwht_isometry(k, seed):
    v = np.random.default_rng(seed).standard_normal(2 ** k)
    ratio = np.linalg.norm(tf.fwht(v)) / np.linalg.norm(v)
    assert 1 - 1e-12 <= ratio <= 1 + 1e-12


# dct

def test_dct_constant_vector():
    out = tf.dct(np.full(8, 3.0))
    np.testing.assert_allclose(out, [3.0 * np.sqrt(8)] + [0.0] * 7, atol=1e-12)


def test_dct_inverse_pair(rng):
    v = rng.standard_normal(100)
    assert np.max(np.abs(tf.idct(tf.dct(v)) - v)) <= 1e-12


def test_dct_matrix_orthogonal():
    Q = dense_of(tf.dct, 8)
    np.testing.assert_allclose(Q @ Q.T, np.eye(8), atol=1e-12)


def test_dct_matches_cosine_formula():
    n = 8
    j, k = np.meshgrid(np.arange(n), np.arange(n))
    Q = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * j + 1) * k / (2 * n))
    Q[0] /= np.sqrt(2.0)
    np.testing.assert_allclose(dense_of(tf.dct, n), Q, atol=1e-12)


@given(st.integers(1, 300), st.integers(0, 2 ** 31 - 1))
def test_dct_isometry(n, seed):
    v = np.random.default_rng(seed).standard_normal(n)
    ratio = np.linalg.norm(tf.dct(v)) / np.linalg.norm(v)
    assert 1 - 1e-12 <= ratio <= 1 + 1e-12


# signs and permutations

def test_signs_are_pm_one_and_reproducible():
    a, b = tf.sample_signs(500, 7), tf.sample_signs(500, 7)
    assert set(np.unique(a.signs)) <= {-1, 1}
    np.testing.assert_array_equal(a.signs, b.signs)
    assert not np.array_equal(a.signs, tf.sample_signs(500, 8).signs)


@given(st.integers(1, 200), st.integers(0, 2 ** 31 - 1))
def test_permutation_is_bijection(n, seed):
    P = tf.sample_permutation(n, seed)
    np.testing.assert_array_equal(np.sort(P.perm), np.arange(n))
    v = np.random.default_rng(seed).standard_normal(n)
    op = P.operator()
    # a permutation moves entries around without changing them
    np.testing.assert_array_equal(np.sort(op.forward(v)), np.sort(v))
    np.testing.assert_array_equal(op.adjoint(op.forward(v)), v)
    np.testing.assert_array_equal(op.forward(v)[P.inverse()], v)


# composition

def test_compose_identity_left(rng):
    A = tf.dense(rng.standard_normal((5, 7)))
    C = tf.compose(tf.identity(5), A)
    u = rng.standard_normal(7)
    np.testing.assert_array_equal(C.forward(u), A.forward(u))


def test_compose_sign_squared_is_identity(rng):
    S = tf.sample_signs(64, 3).operator()
    u = rng.standard_normal(64)
    np.testing.assert_array_equal(tf.compose(S, S).forward(u), u)


def test_compose_dct_with_transpose(rng):
    Q = tf.dct_operator(256)
    u = rng.standard_normal(256)
    assert np.max(np.abs(tf.compose(Q, Q.T).forward(u) - u)) <= 1e-12


def test_compose_applies_right_to_left(rng):
    A, B = rng.standard_normal((3, 4)), rng.standard_normal((4, 6))
    C = tf.compose(tf.dense(A), tf.dense(B))
    np.testing.assert_allclose(C.to_dense(), A @ B, atol=1e-12)
    np.testing.assert_allclose(C.T.to_dense(), (A @ B).T, atol=1e-12)


def test_compose_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        tf.compose(tf.identity(3), tf.identity(4))


def test_forward_checks_length():
    with pytest.raises(DimensionMismatch):
        tf.identity(4).forward(np.ones(5))


@pytest.mark.parametrize("build", [
    lambda r: tf.hadamard(32),
    lambda r: tf.dct_operator(30),
    lambda r: tf.diagonal(r.standard_normal(9)),
    lambda r: tf.restriction(5, 12),
    lambda r: tf.sample_permutation(17, 1).operator(),
    lambda r: tf.compose(tf.restriction(8, 16), tf.hadamard(16), tf.sample_signs(16, 2).operator()),
    lambda r: tf.hstack([tf.identity(8), tf.hadamard(8)]),
    lambda r: tf.scaled(tf.dense(r.standard_normal((4, 6))), 2.5),
])
def test_adjoint_consistency(build, rng):
    assert adjoint_gap(build(rng), rng) <= 1e-10


def test_operators_accept_column_blocks(rng):
    op = tf.compose(tf.hadamard(16), tf.dct_operator(16))
    U = rng.standard_normal((16, 3))
    out = op.forward(U)
    for j in range(3):
        np.testing.assert_allclose(out[:, j], op.forward(U[:, j]), atol=1e-14)


# operator norm

def test_op_norm_identity():
    assert tf.op_norm(tf.identity(50)) == pytest.approx(1.0, abs=1e-8)


def test_op_norm_rotated_diagonal(rng):
    from unilab.ensembles import sample_haar
    lam = rng.uniform(0, 3, 64)
    lam[5] = 4.0
    X = sample_haar(64, lam, seed=1, mode="explicit")
    assert tf.op_norm(X.op) == pytest.approx(2.0, abs=1e-6)


def test_op_norm_is_lower_bound(rng):
    A = rng.standard_normal((30, 20))
    true = np.linalg.norm(A, 2)
    est = tf.op_norm(tf.dense(A), tol=1e-12, max_iter=10_000)
    assert est <= true * (1 + 1e-12)
    assert est == pytest.approx(true, rel=1e-5)


def test_op_norm_reports_estimate_on_failure():
    d = np.linspace(1.0, 0.999, 100)
    with pytest.raises(NoConvergence) as info:
        tf.op_norm(tf.diagonal(d), tol=1e-15, max_iter=3)
    assert 0.99 < info.value.estimate <= 1.0
