"""Regularized least squares by proximal gradient descent.

Objective ``L(beta) = ||y - X beta||^2 / (2N) + sum_i rho(beta_i) / N`` and
iterates ``beta^1 = eta(X^T y)``, ``beta^{t+1} = eta(beta^t - gamma X^T (X beta^t - y))``.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BadGamma, BadProbabilities, DimensionMismatch, NoConvergence, ZeroSignal
from .regularization import prox_vector
from .rng import stream
from .transforms import op_norm

STEP_SAFETY = 1.05


# --------------------------------------------------------------------------
# signal priors

@dataclass(frozen=True)
class DiscretePrior:
    atoms: tuple
    probs: tuple
    name: str = "custom"

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if len(self.atoms) != len(self.probs) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise BadProbabilities(f"{self.name}: probabilities must be nonnegative and sum to 1")

    def moment(self, k):
        return float(np.dot(self.probs, np.asarray(self.atoms, dtype=float) ** k))

    def sample(self, n, rng):
        return rng.choice(np.asarray(self.atoms, dtype=float), size=n,
                          p=np.asarray(self.probs, dtype=float))


def five_point():
    a = 0.1
    return DiscretePrior((0.0, 12.0, -12.0, 20.0, -20.0),
                         (0.9, a / 3, a / 3, a / 6, a / 6), name="five_point")


def sparse_positive(chi):
    return DiscretePrior((0.0, 12.0, 20.0), (1 - chi, 2 * chi / 3, chi / 3),
                         name="sparse_positive")


def sparse_centered(chi):
    return DiscretePrior((0.0, -8.0 / 3, 16.0 / 3), (1 - chi, 2 * chi / 3, chi / 3),
                         name="sparse_centered")


def make_prior(kind, chi=None, atoms=None, probs=None):
    if kind == "five_point":
        return five_point()
    if kind == "sparse_positive":
        return sparse_positive(chi)
    if kind == "sparse_centered":
        return sparse_centered(chi)
    if kind == "custom":
        return DiscretePrior(tuple(atoms), tuple(probs))
    raise ValueError(f"unknown prior {kind!r}")


def sample_prior(kind, N, seed, chi=None, atoms=None, probs=None):
    """I.i.d. coordinates from a named discrete prior."""
    prior = make_prior(kind, chi=chi, atoms=atoms, probs=probs)
    return prior.sample(N, stream(seed, "prior", kind))


# --------------------------------------------------------------------------
# problem instance and objective

@dataclass
class LinearModelInstance:
    X: object
    beta_star: np.ndarray
    noise_sigma: float
    epsilon: np.ndarray
    y: np.ndarray

    @property
    def N(self):
        return self.X.cols

    @property
    def M(self):
        return self.X.rows

    def xty(self):
        if not hasattr(self, "_xty"):
            self._xty = self.X.adjoint(self.y)
        return self._xty


def make_instance(X, beta_star, sigma=0.0, seed=0, epsilon=None):
    """``y = X beta_star + epsilon`` with ``epsilon ~ N(0, sigma^2 I_M)`` unless given."""
    beta_star = np.asarray(beta_star, dtype=float)
    if beta_star.shape != (X.cols,):
        raise DimensionMismatch(f"beta_star has shape {beta_star.shape}, expected ({X.cols},)")
    if epsilon is None:
        epsilon = sigma * stream(seed, "noise").standard_normal(X.rows)
    epsilon = np.asarray(epsilon, dtype=float)
    if epsilon.shape != (X.rows,):
        raise DimensionMismatch(f"epsilon has shape {epsilon.shape}, expected ({X.rows},)")
    y = X.forward(beta_star) + epsilon
    return LinearModelInstance(X=X, beta_star=beta_star, noise_sigma=float(sigma),
                               epsilon=epsilon, y=y)


def rls_objective(inst, beta, rho):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (inst.N,):
        raise DimensionMismatch(f"beta has shape {beta.shape}, expected ({inst.N},)")
    r = inst.y - inst.X.forward(beta)
    return float(r @ r) / (2 * inst.N) + rho.total(beta) / inst.N


def mse(beta, beta_star):
    d = np.asarray(beta) - np.asarray(beta_star)
    return float(d @ d) / d.shape[0]


def nmse(beta, beta_star):
    beta_star = np.asarray(beta_star, dtype=float)
    s = float(beta_star @ beta_star)
    if s == 0.0:
        raise ZeroSignal("NMSE undefined for a zero signal")
    d = np.asarray(beta, dtype=float) - beta_star
    return float(d @ d) / s


# --------------------------------------------------------------------------
# proximal gradient

@dataclass
class ProxGradTrajectory:
    gamma: float
    T: int
    ts: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    nmse: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    objective_history: Optional[np.ndarray] = None
    first: Optional[np.ndarray] = None
    final: Optional[np.ndarray] = None
    converged: bool = False

    def max_increase(self):
        """Largest relative increase between consecutive objective values."""
        h = self.objective_history
        if h is None or h.size < 2:
            return 0.0
        return float(np.max((h[1:] - h[:-1]) / np.maximum(np.abs(h[:-1]), 1e-300)))

    def is_monotone(self, slack=1e-10):
        return self.max_increase() <= slack

    def rows(self):
        for i, t in enumerate(self.ts):
            yield (t, self.objective[i],
                   self.mse[i] if self.mse else float("nan"),
                   self.nmse[i] if self.nmse else float("nan"))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "objective", "mse", "nmse"])
            for t, obj, m, n in self.rows():
                w.writerow([t, repr(obj), repr(m), repr(n)])


def default_step(X, tol=1e-8, max_iter=1000, seed=0):
    """``1 / (1.05 * ||X||_op^2)``; an unconverged power iteration still yields a step."""
    if hasattr(X, "op_norm"):
        norm = X.op_norm(tol=tol, max_iter=max_iter, seed=seed)
    else:
        try:
            norm = op_norm(X, tol=tol, max_iter=max_iter, seed=seed)
        except NoConvergence as exc:
            norm = exc.estimate
    return 1.0 / (STEP_SAFETY * norm ** 2)


def prox_grad(inst, rho, gamma=None, T=100, record_every=1, beta_star=None, tol=None,
              patience=50, keep_iterates=False, start=None):
    """Run ``T`` proximal gradient iterates (``beta^1 ... beta^T``).

    With ``tol`` set, stops early once the objective changed by less than
    ``tol`` (relative) over the last ``patience`` iterations. Recording
    happens every ``record_every`` iterations and at the final iterate.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if gamma is None:
        gamma = default_step(inst.X)
    if not gamma > 0:
        raise BadGamma(f"gamma must be positive, got {gamma}")
    if beta_star is None:
        beta_star = inst.beta_star
    X, y, N = inst.X, inst.y, inst.N
    signal = float(beta_star @ beta_star) if beta_star is not None else 0.0

    traj = ProxGradTrajectory(gamma=float(gamma), T=0)
    history = np.empty(T)
    beta = prox_vector(rho, inst.xty(), gamma) if start is None else np.array(start, dtype=float)
    traj.first = beta.copy()
    for t in range(1, T + 1):
        r = X.forward(beta) - y
        obj = float(r @ r) / (2 * N) + rho.total(beta) / N
        history[t - 1] = obj
        done = t == T
        if tol is not None and t > patience:
            old = history[t - 1 - patience]
            if abs(old - obj) <= tol * abs(obj):
                done = True
                traj.converged = True
        if done or (t - 1) % record_every == 0:
            traj.ts.append(t)
            traj.objective.append(obj)
            if beta_star is not None:
                d = beta - beta_star
                e = float(d @ d)
                traj.mse.append(e / N)
                traj.nmse.append(e / signal if signal > 0 else float("nan"))
            if keep_iterates:
                traj.iterates.append(beta.copy())
        if done:
            traj.T = t
            break
        beta = prox_vector(rho, beta - gamma * X.adjoint(r), gamma)
    traj.objective_history = history[:traj.T]
    traj.final = beta
    return traj


def solve_rls(inst, rho, gamma=None, tol=1e-10, patience=50, max_iter=100_000, **kw):
    """Proximal gradient run until the stopping rule fires or ``max_iter``."""
    return prox_grad(inst, rho, gamma=gamma, T=max_iter, tol=tol, patience=patience, **kw)


def gap_bound_check(traj, inst, rho, beta_ref):
    """Per recorded ``t >= 2``: (t, gap, bound) with the gap measured against ``beta_ref``.

    The bound is ``||beta^1 - beta_ref||^2 / (2 gamma (t - 1) N)``.
    """
    ref_obj = rls_objective(inst, beta_ref, rho)
    d = traj.first - beta_ref
    dist2 = float(d @ d)
    out = []
    for t, obj in zip(traj.ts, traj.objective):
        if t < 2:
            continue
        out.append((t, obj - ref_obj, dist2 / (2 * traj.gamma * (t - 1) * inst.N)))
    return out
