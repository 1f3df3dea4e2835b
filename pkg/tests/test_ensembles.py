import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unilab import ensembles as en
from unilab.errors import (BadAspect, ExplicitTooLarge, InvalidL, NegativeLambda, NonPowerOfTwo,
                           UnsupportedEnsemble)

from conftest import adjoint_gap

ALL_TAGS = ("spike_sine", "spike_hwt", "mask", "rand_dct", "haar", "partial_hadamard", "tiid",
            "spike_hwt_unsigned", "rand_dct_unsigned")


# spikes + orthogonal

def test_spike_hwt_rows_orthonormal_exactly():
    F = en.sample_spike_hwt(4, seed=0).to_dense()
    np.testing.assert_allclose(F @ F.T, np.eye(4), atol=1e-15)


def test_spike_diagonal_of_gram_is_half():
    F = en.sample_spike_hwt(4, seed=1).to_dense()
    np.testing.assert_allclose(np.diag(F.T @ F), 0.5, atol=1e-15)


def test_spike_sine_singular_values_are_one():
    F = en.sample_spike_sine(8, seed=2).to_dense()
    np.testing.assert_allclose(np.linalg.svd(F, compute_uv=False), 1.0, atol=1e-12)


def test_spike_hwt_needs_power_of_two():
    with pytest.raises(NonPowerOfTwo):
        en.sample_spike_hwt(6)


def test_spike_records_bernoulli_half():
    X = en.sample_spike_sine(16)
    assert X.measure.kind == "bernoulli" and X.measure.alpha == 0.5
    np.testing.assert_array_equal(X.lam, en.spike_lambda(32))


# masks

def test_mask_rademacher_single_block_is_tight_frame(rng):
    X = en.sample_mask(16, 1, en.RADEMACHER, seed=3)
    v = rng.standard_normal(16)
    np.testing.assert_allclose(X.forward(X.adjoint(v)), v, atol=1e-12)


def test_mask_frame_operator_is_sum_of_squared_masks():
    X = en.sample_mask(4, 2, en.UNIFORM, seed=4)
    J = X.to_dense()
    R = np.sum(X.extras["masks"] ** 2, axis=0)
    np.testing.assert_allclose(J @ J.T, np.diag(R), atol=1e-14)
    np.testing.assert_array_equal(X.extras["R"], R)


def test_mask_uniform_first_moment():
    # E[R]/L = E[D^2] = 1/3 for Unif[-1, 1]
    X = en.sample_mask(2 ** 14, 2, en.UNIFORM, seed=5)
    assert np.mean(X.lam) * 2 / 2 == pytest.approx(1 / 3, abs=0.01)
    assert en.UNIFORM.even_moment(1) == pytest.approx(1 / 3)


def test_mask_distribution_is_symmetric():
    rng = np.random.default_rng(0)
    d = en.UNIFORM.sample(rng, 200_000)
    assert abs(np.mean(d)) < 3 * np.std(d) / np.sqrt(d.size)
    assert abs(np.mean(d ** 3)) < 3 * np.std(d ** 3) / np.sqrt(d.size)
    assert np.max(np.abs(d)) <= 1.0


def test_mask_bad_L():
    with pytest.raises(InvalidL):
        en.sample_mask(8, 0)


# randomly permuted DCT

def test_rand_dct_spike_spectrum_rank():
    X = en.sample_rand_dct(8, en.spike_lambda(8), seed=6)
    assert np.linalg.matrix_rank(X.to_dense()) == 4


def test_rand_dct_all_ones_is_orthogonal(rng):
    X = en.sample_rand_dct(64, np.ones(64), seed=7)
    v = rng.standard_normal(64)
    np.testing.assert_allclose(X.gram(v), v, atol=1e-12)


def test_rand_dct_mask_spectrum():
    lam = en.mask_lambda(8, 2, en.UNIFORM, seed=8)
    X = en.sample_rand_dct(8, lam, seed=9)
    A = X.to_dense()
    np.testing.assert_allclose(np.linalg.eigvalsh(A.T @ A), np.sort(lam), atol=1e-10)


def test_rand_dct_negative_lambda():
    with pytest.raises(NegativeLambda):
        en.sample_rand_dct(4, [1, -1, 0, 0])


# Haar

def dense_householder_product(core):
    """V = H_1 ... H_{N-1} D rebuilt from the stored reflection vectors."""
    N = core.N
    V = np.eye(N)
    d = np.empty(N)
    for b in range(core.nblocks):
        for k, v, s in core._block_vectors(b):
            H = np.eye(N)
            H[k:, k:] -= 2.0 * np.outer(v, v)
            V = V @ H
            d[k] = s
    d[N - 1] = core._last_sign
    return V * d


def test_lazy_haar_matches_materialized_reflections(rng):
    X = en.sample_haar(64, np.ones(64), seed=10, mode="lazy")
    V = dense_householder_product(X.extras["V"])
    np.testing.assert_allclose(V.T @ V, np.eye(64), atol=1e-12)
    for _ in range(4):
        u = rng.standard_normal(64)
        np.testing.assert_allclose(X.forward(u), V.T @ u, atol=1e-10)
        np.testing.assert_allclose(X.adjoint(u), V @ u, atol=1e-10)


def test_householder_signs_make_r_positive():
    # V = QR with positive diag(R) means V^T G has positive diagonal for the generating G
    core = en.HouseholderHaar(16, seed=11, block=4)
    V = dense_householder_product(core)
    np.testing.assert_allclose(core.to_dense(), V, atol=1e-12)


@pytest.mark.parametrize("mode", ["explicit", "lazy", "revealed"])
def test_haar_gram_spectrum(mode):
    lam = np.random.default_rng(1).uniform(0, 3, 32)
    X = en.sample_haar(32, lam, seed=12, mode=mode)
    A = X.to_dense()
    np.testing.assert_allclose(np.linalg.eigvalsh(A.T @ A), np.sort(lam), atol=1e-9)


@pytest.mark.parametrize("mode", ["explicit", "lazy", "revealed"])
def test_haar_orthogonal_preserves_norm(mode, rng):
    X = en.sample_haar(128, np.ones(128), seed=13, mode=mode)
    for _ in range(3):
        v = rng.standard_normal(128)
        assert np.linalg.norm(X.forward(v)) == pytest.approx(np.linalg.norm(v), rel=1e-12)


@pytest.mark.parametrize("mode", ["explicit", "lazy", "revealed"])
def test_haar_trace_statistics(mode):
    # for Haar V on O(N), Tr V has mean 0 and variance 1 (N >= 2)
    traces = []
    for seed in range(300):
        core = en.sample_haar(16, np.ones(16), seed=seed, mode=mode)
        traces.append(np.trace(core.to_dense()))
    traces = np.array(traces)
    assert abs(traces.mean()) < 4 / np.sqrt(300)
    assert traces.var() == pytest.approx(1.0, abs=0.3)


def test_revealed_haar_answers_are_consistent(rng):
    X = en.sample_haar(256, np.ones(256), seed=14, mode="revealed")
    u, w = rng.standard_normal(256), rng.standard_normal(256)
    a = X.forward(u)
    b = X.forward(w)
    c = X.forward(2 * u - 3 * w)
    np.testing.assert_allclose(c, 2 * a - 3 * b, atol=1e-10)
    np.testing.assert_allclose(X.adjoint(a), u, atol=1e-10)


def test_explicit_haar_size_limit():
    with pytest.raises(ExplicitTooLarge):
        en.sample_haar(4096, np.ones(4096), mode="explicit")


# partial Hadamard

def test_partial_hadamard_rows_orthonormal(rng):
    X = en.sample_partial_hadamard(8, 32, seed=15)
    v = rng.standard_normal(8)
    assert np.max(np.abs(X.forward(X.adjoint(v)) - v)) <= 1e-12


def test_partial_hadamard_trace_and_entries():
    X = en.sample_partial_hadamard(8, 32, seed=16)
    A = X.to_dense()
    assert np.trace(A.T @ A) / 32 == pytest.approx(8 / 32, abs=1e-14)
    np.testing.assert_allclose(np.abs(A), 32 ** -0.5, atol=1e-15)


def test_partial_hadamard_aspect_errors():
    with pytest.raises(BadAspect):
        en.sample_partial_hadamard(40, 32)
    with pytest.raises(NonPowerOfTwo):
        en.sample_partial_hadamard(4, 24)


# transformed i.i.d.

def test_tiid_column_norms():
    X = en.sample_tiid(np.ones(256), 256, 256, "gaussian", seed=17)
    Z = X.extras["matrix"]
    assert np.mean(np.sum(Z ** 2, axis=0)) == pytest.approx(1.0, rel=0.05)


def test_tiid_rademacher_edge():
    X = en.sample_tiid(np.ones(1024), 1024, 1024, "rademacher", seed=18)
    top = np.linalg.eigvalsh(X.extras["matrix"].T @ X.extras["matrix"])[-1]
    assert top == pytest.approx(4.0, rel=0.10)


def test_tiid_scaling_doubles_singular_values():
    a = en.sample_tiid(np.ones(20), 20, 30, seed=19).extras["matrix"]
    b = en.sample_tiid(2 * np.ones(20), 20, 30, seed=19).extras["matrix"]
    np.testing.assert_allclose(np.linalg.svd(b, compute_uv=False),
                               2 * np.linalg.svd(a, compute_uv=False), atol=1e-12)


# unsigned variants

def test_unsigned_spike_hwt_gram_of_ones():
    M = 16
    J = en.unsigned_variant(en.sample_spike_hwt(M, seed=20))
    expected = 0.5 * np.ones(2 * M)
    expected[0] += np.sqrt(M) / 2
    expected[M] += np.sqrt(M) / 2
    assert np.max(np.abs(J.gram(np.ones(2 * M)) - expected)) <= 1e-10


@pytest.mark.parametrize("seed", range(6))
def test_unsigned_rand_dct_gram_of_ones(seed):
    N = 32
    J = en.unsigned_variant(en.sample_rand_dct(N, en.spike_lambda(N), seed=seed))
    g = J.gram(np.ones(N))
    assert (np.max(np.abs(g - 1.0)) <= 1e-10) or (np.max(np.abs(g)) <= 1e-10)


def test_signed_spike_hwt_gram_of_ones_statistics():
    N = 2 ** 14
    g = en.sample_spike_hwt(N // 2, seed=21).gram(np.ones(N))
    assert g.mean() == pytest.approx(0.5, rel=0.10)
    assert g.var() == pytest.approx(0.25, rel=0.10)


def test_unsigned_variant_rejects_other_ensembles():
    with pytest.raises(UnsupportedEnsemble):
        en.unsigned_variant(en.sample_mask(8))


# shared invariants

@pytest.mark.parametrize("tag", ALL_TAGS)
def test_adjoint_consistency(tag, rng):
    assert adjoint_gap(en.sample_ensemble(tag, 128, seed=22), rng) <= 1e-10


@pytest.mark.parametrize("tag", ALL_TAGS)
def test_samplers_are_deterministic(tag, rng):
    a, b = en.sample_ensemble(tag, 64, seed=23), en.sample_ensemble(tag, 64, seed=23)
    v = rng.standard_normal(64)
    np.testing.assert_array_equal(a.forward(v), b.forward(v))


@pytest.mark.parametrize("tag", ["mask", "rand_dct", "haar", "spike_sine", "partial_hadamard"])
def test_declared_spectrum_matches_dense(tag):
    X = en.sample_ensemble(tag, 64, seed=24)
    A = X.to_dense()
    np.testing.assert_allclose(np.linalg.eigvalsh(A.T @ A), np.sort(X.lam), atol=1e-9)


@pytest.mark.parametrize("tag", ["spike_sine", "spike_hwt", "partial_hadamard"])
def test_frames_are_tight(tag, rng):
    X = en.sample_ensemble(tag, 256, seed=25)
    for _ in range(16):
        v = rng.standard_normal(X.rows)
        assert np.max(np.abs(X.forward(X.adjoint(v)) - v)) <= 1e-10


@given(st.integers(1, 6), st.integers(0, 10 ** 6))
def test_rand_dct_singular_values_property(k, seed):
    N = 2 ** k
    lam = np.random.default_rng(seed).uniform(0, 2, N)
    A = en.sample_rand_dct(N, lam, seed=seed).to_dense()
    np.testing.assert_allclose(np.sort(np.linalg.svd(A, compute_uv=False) ** 2), np.sort(lam),
                               atol=1e-10)


def test_op_norm_from_spectrum():
    lam = np.ones(64)
    lam[3] = 4.0
    assert en.sample_haar(64, lam, seed=1, mode="explicit").op_norm() == pytest.approx(2.0)
    assert en.sample_spike_sine(32).op_norm() == pytest.approx(1.0)
