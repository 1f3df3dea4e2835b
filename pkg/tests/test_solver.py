import numpy as np
import pytest

from unilab import ensembles as en
from unilab import regularization as rg
from unilab import solver as so
from unilab import transforms as tf
from unilab.errors import BadGamma, BadProbabilities, DimensionMismatch, ZeroSignal


def dense_instance(seed, M=4, N=4, sigma=0.3):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((M, N)) / np.sqrt(N)
    X = tf.dense(A)
    beta = rng.standard_normal(N)
    return A, so.make_instance(X, beta, sigma=sigma, seed=seed)


# objective

def test_objective_zero_at_truth():
    X = en.sample_spike_sine(32, seed=0)
    beta = so.sample_prior("five_point", 64, seed=1)
    inst = so.make_instance(X, beta, sigma=0.0)
    assert so.rls_objective(inst, beta, rg.zero()) == 0.0


def test_objective_at_zero():
    X = en.sample_spike_sine(32, seed=0)
    inst = so.make_instance(X, so.sample_prior("five_point", 64, seed=1), sigma=1.0, seed=2)
    assert so.rls_objective(inst, np.zeros(64), rg.zero()) == pytest.approx(inst.y @ inst.y / 128)


def test_objective_matches_dense():
    A, inst = dense_instance(3)
    b = np.array([0.5, -1.0, 0.0, 2.0])
    rho = rg.elastic_net(0.4, 0.1)
    r = inst.y - A @ b
    brute = (r @ r) / 8 + sum(0.4 * abs(v) + 0.1 * v * v for v in b) / 4
    assert so.rls_objective(inst, b, rho) == pytest.approx(brute, rel=1e-13)


def test_objective_dimension_mismatch():
    _, inst = dense_instance(3)
    with pytest.raises(DimensionMismatch):
        so.rls_objective(inst, np.zeros(5), rg.zero())


def test_instance_recomputable():
    X = en.sample_ensemble("mask", 256, seed=4)
    inst = so.make_instance(X, so.sample_prior("five_point", X.cols, seed=5), sigma=1.0, seed=6)
    np.testing.assert_allclose(X.forward(inst.beta_star) + inst.epsilon, inst.y, atol=1e-12)
    assert np.std(inst.epsilon) == pytest.approx(1.0, rel=0.1)


# NMSE

def test_nmse_identities():
    b = np.array([1.0, -2.0, 0.0, 3.0])
    assert so.nmse(b, b) == 0.0
    assert so.nmse(np.zeros(4), b) == 1.0
    assert so.nmse(2 * b, b) == 1.0
    with pytest.raises(ZeroSignal):
        so.nmse(b, np.zeros(4))


# priors

def test_five_point_second_moment():
    x = so.sample_prior("five_point", 10 ** 6, seed=7)
    target = 0.1 * (2 / 3 * 144 + 1 / 3 * 400)
    assert target == pytest.approx(22.9333, abs=1e-4)
    assert np.mean(x ** 2) == pytest.approx(target, rel=0.01)
    assert set(np.unique(x)) <= {0.0, 12.0, -12.0, 20.0, -20.0}


def test_sparse_centered_mean():
    x = so.sample_prior("sparse_centered", 10 ** 6, seed=8, chi=0.3)
    assert so.sparse_centered(0.3).moment(1) == pytest.approx(0.0, abs=1e-15)
    assert abs(np.mean(x)) <= 3 * np.std(x) / 1e3


def test_sparse_positive_atoms():
    p = so.sparse_positive(0.4)
    assert p.moment(1) == pytest.approx(0.4 * (2 / 3 * 12 + 1 / 3 * 20))


def test_chi_zero_gives_zero_signal():
    assert not np.any(so.sample_prior("sparse_positive", 1000, seed=9, chi=0.0))


def test_bad_probabilities():
    with pytest.raises(BadProbabilities):
        so.sample_prior("custom", 10, seed=0, atoms=[0, 1], probs=[0.5, 0.6])
    with pytest.raises(BadProbabilities):
        so.sparse_positive(1.5)


# proximal gradient

def test_orthogonal_first_iterate_is_truth():
    X = en.sample_haar(64, np.ones(64), seed=10, mode="explicit")
    beta = so.sample_prior("five_point", 64, seed=11)
    inst = so.make_instance(X, beta, sigma=0.0)
    tr = so.prox_grad(inst, rg.zero(), T=1)
    np.testing.assert_allclose(tr.first, beta, atol=1e-12)


def test_ridge_closed_form():
    A, inst = dense_instance(12)
    l2 = 0.05
    tr = so.prox_grad(inst, rg.ridge(l2), T=10 ** 4, record_every=1000)
    exact = np.linalg.solve(A.T @ A + 2 * l2 * np.eye(4), A.T @ inst.y)
    np.testing.assert_allclose(tr.final, exact, atol=1e-8)
    assert tr.T == 10 ** 4


def test_default_step_uses_norm():
    X = en.sample_spike_sine(64, seed=13)
    assert so.default_step(X) == pytest.approx(1 / 1.05)
    A = np.diag([3.0, 1.0])
    assert so.default_step(tf.dense(A)) == pytest.approx(1 / (1.05 * 9), rel=1e-6)


@pytest.mark.parametrize("tag", ["spike_sine", "mask", "rand_dct", "haar", "partial_hadamard"])
def test_objective_monotone(tag):
    X = en.sample_ensemble(tag, 256, seed=14)
    inst = so.make_instance(X, so.sample_prior("five_point", X.cols, seed=15), sigma=1.0, seed=16)
    tr = so.prox_grad(inst, rg.elastic_net(0.5, 5e-4), T=200)
    assert tr.is_monotone()
    assert len(tr.objective_history) == 200


def test_recording_schedule():
    _, inst = dense_instance(17)
    tr = so.prox_grad(inst, rg.l1(0.1), T=25, record_every=10, keep_iterates=True)
    assert tr.ts == [1, 11, 21, 25]
    assert len(tr.iterates) == 4 and len(tr.mse) == 4
    np.testing.assert_array_equal(tr.iterates[-1], tr.final)


def test_early_stop():
    _, inst = dense_instance(18)
    tr = so.solve_rls(inst, rg.elastic_net(0.1, 0.1), tol=1e-10, patience=50)
    assert tr.converged and tr.T < 100_000


def test_bad_gamma_and_T():
    _, inst = dense_instance(19)
    with pytest.raises(BadGamma):
        so.prox_grad(inst, rg.zero(), gamma=0.0)
    with pytest.raises(ValueError):
        so.prox_grad(inst, rg.zero(), T=0)


def test_trajectory_csv(tmp_path):
    _, inst = dense_instance(20)
    tr = so.prox_grad(inst, rg.l1(0.1), T=5)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,objective,mse,nmse"
    assert len(lines) == 6


@pytest.mark.parametrize("tag", ["spike_sine", "rand_dct", "haar"])
def test_gap_bound(tag):
    X = en.sample_ensemble(tag, 256, seed=21)
    inst = so.make_instance(X, so.sample_prior("five_point", X.cols, seed=22), sigma=1.0, seed=23)
    rho = rg.elastic_net(0.5, 5e-4)
    budget = 100
    tr = so.prox_grad(inst, rho, T=budget)
    ref = so.prox_grad(inst, rho, gamma=tr.gamma, T=20 * budget, record_every=10 ** 6).final
    for t, gap, bound in so.gap_bound_check(tr, inst, rho, ref):
        assert gap <= bound + 1e-12, (t, gap, bound)


def test_sign_change_of_variables():
    # J S applied to S beta gives the same data, so the minimisers differ by S
    rng = np.random.default_rng(24)
    A = rng.standard_normal((24, 32)) / np.sqrt(32)
    s = rng.choice([-1.0, 1.0], 32)
    beta = so.sample_prior("five_point", 32, seed=25)
    eps = rng.standard_normal(24)
    rho = rg.elastic_net(0.5, 0.01)
    b1 = so.solve_rls(so.make_instance(tf.dense(A), beta, epsilon=eps), rho, tol=1e-15,
                      max_iter=200_000).final
    b2 = so.solve_rls(so.make_instance(tf.dense(A * s), s * beta, epsilon=eps), rho, tol=1e-15,
                      max_iter=200_000).final
    np.testing.assert_allclose(b1, s * b2, atol=1e-6)


@pytest.mark.slow
def test_haar_lambda_permutation_invariance():
    N, T = 2 ** 14, 100
    rho = rg.elastic_net(1.0, 1e-3)
    lam = en.spike_lambda(N)
    lam_perm = lam[np.random.default_rng(26).permutation(N)]
    curves = {0: [], 1: []}
    for s in range(8):
        beta = so.sample_prior("five_point", N, seed=100 + s)
        for key, lv, off in ((0, lam, 0), (1, lam_perm, 500)):
            X = en.sample_haar(N, lv, seed=1000 + s + off, mode="revealed")
            inst = so.make_instance(X, beta, sigma=1.0, seed=200 + s)
            curves[key].append(so.prox_grad(inst, rho, T=T, record_every=T).nmse[-1])
    a, b = np.median(curves[0]), np.median(curves[1])
    assert abs(a - b) / min(a, b) <= 0.03
