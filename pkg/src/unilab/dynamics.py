"""GFOM / VAMP recursions, divergence-free corrections and state evolution.

A GFOM runs ``z^t = M_t f_t(z^1..z^{t-1}; A) + eta_t(z^1..z^{t-1}; A)`` with
entrywise nonlinearities and an ``N x b`` auxiliary matrix ``A``. VAMP drops
the ``eta`` term and requires divergence-free ``f``'s; its iterates are then
described by the Gaussian state evolution ``Sigma_{s,t} = Omega_{t,s} E[f_t f_s]``.
"""

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import chebyshev

from .errors import (BadDegree, DimensionMismatch, MCVarianceTooHigh, NonPSDIntermediate,
                     NotDivergenceFree, SingularSigma)
from .regularization import prox_vector
from .rng import derive_seed, stream
from .transforms import LinearOperator, compose, op_norm, sample_signs


@dataclass
class Nonlinearity:
    """Entrywise map of the iterate history and auxiliary rows.

    ``func(history, aux)`` receives a list of ``t - 1`` arrays (one per past
    iterate, all of the same length n) and an ``n x b`` auxiliary array, and
    returns a length-n array.
    """

    func: Callable
    arity: int = 0
    lipschitz: Optional[float] = None
    divergence_free: bool = False
    label: str = "f"
    info: dict = field(default_factory=dict)

    def __call__(self, history, aux):
        return np.asarray(self.func(history, aux), dtype=float)


def zero_map(arity=0):
    return Nonlinearity(lambda h, a: np.zeros(a.shape[0]), arity=arity, lipschitz=0.0,
                        divergence_free=True, label="0")


@dataclass
class DynamicsSpec:
    T: int
    operators: list
    f_list: list
    eta_list: Optional[list] = None
    aux: Optional[np.ndarray] = None

    def validate(self):
        N = self.aux.shape[0]
        if len(self.operators) != self.T or len(self.f_list) != self.T:
            raise DimensionMismatch("operators and f_list must have length T")
        if self.eta_list is not None and len(self.eta_list) != self.T:
            raise DimensionMismatch("eta_list must have length T")
        for op in self.operators:
            if op.rows != N or op.cols != N:
                raise DimensionMismatch("every operator must be N x N with N = aux rows")


def build_semirandom(psis, seed):
    """``M_i = S Psi_i S`` with one shared fresh sign diagonal ``S``."""
    N = psis[0].cols
    for p in psis:
        if p.rows != N or p.cols != N:
            raise DimensionMismatch("all Psi must be square of the same size")
    S = sample_signs(N, seed).operator()
    return [compose(S, p, S) for p in psis]


def run_gfom(spec):
    """Iterates ``z^1..z^T`` of the GFOM described by ``spec``."""
    spec.validate()
    N = spec.aux.shape[0]
    zs = []
    for t in range(spec.T):
        z = spec.operators[t].forward(spec.f_list[t](zs, spec.aux))
        if spec.eta_list is not None:
            z = z + spec.eta_list[t](zs, spec.aux)
        if z.shape != (N,):
            raise DimensionMismatch(f"iterate {t + 1} has shape {z.shape}")
        zs.append(z)
    return zs


def run_vamp(spec):
    """VAMP iterates ``z^t = M_t f_t(z^1..z^{t-1}; A)``."""
    for t, f in enumerate(spec.f_list):
        if not f.divergence_free:
            raise NotDivergenceFree(f"f_{t + 1} is not flagged divergence-free")
    if spec.eta_list is not None and any(e.label != "0" for e in spec.eta_list):
        raise NotDivergenceFree("VAMP programs carry no eta terms")
    return run_gfom(DynamicsSpec(spec.T, spec.operators, spec.f_list, None, spec.aux))


def empirical_gram(zs):
    Z = np.stack(zs, axis=1)
    return Z.T @ Z / Z.shape[0]


# --------------------------------------------------------------------------
# Gaussian sampling helpers

def _psd_factor(S):
    """A factor ``L`` with ``L L^T = S`` after clipping negative eigenvalues."""
    w, V = np.linalg.eigh((S + S.T) / 2)
    return V * np.sqrt(np.clip(w, 0.0, None))


def _gaussian_columns(Sigma, n, rng):
    t = Sigma.shape[0]
    if t == 0:
        return []
    G = rng.standard_normal((n, t)) @ _psd_factor(Sigma).T
    return [G[:, s] for s in range(t)]


def divergence_free_correct(f, Sigma_prev, aux_sampler, mc_samples=100_000, seed=0,
                            max_rel_se=0.2):
    """Subtract from ``f`` its linear projection on the past Gaussian iterates.

    ``f_hat(z; a) = f(z; a) - sum_s beta_s z_s`` with ``Sigma_prev beta =
    E[f(Z; A) Z]``, ``Z ~ N(0, Sigma_prev)`` independent of ``A``. The
    expectation is a Monte Carlo average; a pseudo-inverse is used (with a
    :class:`SingularSigma` warning) when ``Sigma_prev`` is singular. The
    orthogonality residual is re-measured on a fresh sample and stored in
    ``info`` together with its standard errors.
    """
    if mc_samples < 10_000:
        raise ValueError("mc_samples must be at least 1e4")
    Sigma_prev = np.atleast_2d(np.asarray(Sigma_prev, dtype=float))
    t1 = Sigma_prev.shape[0]
    if t1 == 0:
        return Nonlinearity(f.func, f.arity, f.lipschitz, True, f.label, {"beta": []})
    rng = stream(seed, "div-free")
    Z = _gaussian_columns(Sigma_prev, mc_samples, rng)
    A = aux_sampler(rng, mc_samples)
    F = f(Z, A)
    prods = np.stack([F * z for z in Z], axis=1)
    b = prods.mean(axis=0)
    b_se = prods.std(axis=0, ddof=1) / np.sqrt(mc_samples)
    scale = np.sqrt(np.mean(F ** 2) * np.diag(Sigma_prev))
    if np.any(b_se > max_rel_se * np.maximum(scale, 1e-12)):
        raise MCVarianceTooHigh("Monte Carlo error too large relative to the signal scale")
    if np.linalg.matrix_rank(Sigma_prev) < t1:
        warnings.warn("singular covariance; using a pseudo-inverse", SingularSigma)
        beta = np.linalg.pinv(Sigma_prev) @ b
    else:
        beta = np.linalg.solve(Sigma_prev, b)
    beta = np.asarray(beta, dtype=float)

    def corrected(history, aux, _f=f.func, _beta=beta):
        out = np.asarray(_f(history, aux), dtype=float)
        for s, coef in enumerate(_beta):
            out = out - coef * history[s]
        return out

    lip = None if f.lipschitz is None else f.lipschitz + float(np.sum(np.abs(beta)))
    g = Nonlinearity(corrected, f.arity, lip, True, f.label + "_df", {"beta": beta.tolist()})

    rng2 = stream(seed, "div-free", "check")
    Z2 = _gaussian_columns(Sigma_prev, mc_samples, rng2)
    A2 = aux_sampler(rng2, mc_samples)
    G2 = g(Z2, A2)
    res = np.stack([G2 * z for z in Z2], axis=1)
    g.info["residual"] = res.mean(axis=0).tolist()
    g.info["residual_se"] = (res.std(axis=0, ddof=1) / np.sqrt(mc_samples)).tolist()
    return g


# --------------------------------------------------------------------------
# state evolution

@dataclass
class StateEvolution:
    Omega: np.ndarray
    Phi: np.ndarray
    Sigma: np.ndarray
    Phi_se: np.ndarray
    Sigma_se: np.ndarray
    mc_samples: int
    projected: bool = False

    @property
    def T(self):
        return self.Sigma.shape[0]


def state_evolution(Omega, f_list, aux_sampler, mc_samples=100_000, seed=0):
    """Monte Carlo evaluation of the Gaussian state evolution.

    Samples ``(Z_1..Z_t)`` are extended one coordinate at a time from the
    conditional Gaussian law implied by the ``Sigma`` built so far, so one
    sample set serves every entry. ``Phi`` and ``Sigma`` carry standard errors.
    """
    Omega = np.asarray(Omega, dtype=float)
    T = len(f_list)
    if Omega.shape != (T, T):
        raise DimensionMismatch("Omega must be T x T")
    if not np.allclose(Omega, Omega.T, atol=1e-10):
        raise ValueError("Omega must be symmetric")
    rng = stream(seed, "state-evolution")
    A = aux_sampler(rng, mc_samples)
    Phi = np.zeros((T, T))
    Phi_se = np.zeros((T, T))
    Sigma = np.zeros((T, T))
    projected = False
    Zs, Fs = [], []
    for t in range(T):
        F = f_list[t](Zs, A)
        Fs.append(F)
        for s in range(t + 1):
            prod = F * Fs[s]
            Phi[s, t] = Phi[t, s] = prod.mean()
            Phi_se[s, t] = Phi_se[t, s] = prod.std(ddof=1) / np.sqrt(mc_samples)
            Sigma[s, t] = Sigma[t, s] = Omega[t, s] * Phi[s, t]
        # extend the Gaussian sample by Z_{t+1} | Z_1..Z_t
        S = Sigma[:t + 1, :t + 1]
        w = np.linalg.eigvalsh((S + S.T) / 2)
        if w.min() < -1e-10 * max(1.0, abs(w).max()):
            warnings.warn(f"Sigma_{t + 1} is not PSD; projecting", NonPSDIntermediate)
            projected = True
        if t == 0:
            Zs.append(np.sqrt(max(Sigma[0, 0], 0.0)) * rng.standard_normal(mc_samples))
        else:
            past = Sigma[:t, :t]
            cross = Sigma[t, :t]
            coef = np.linalg.pinv(past) @ cross
            var = max(Sigma[t, t] - cross @ coef, 0.0)
            mean = sum(c * z for c, z in zip(coef, Zs))
            Zs.append(mean + np.sqrt(var) * rng.standard_normal(mc_samples))
    Sigma_se = np.abs(Omega) * Phi_se
    return StateEvolution(Omega=Omega, Phi=Phi, Sigma=Sigma, Phi_se=Phi_se, Sigma_se=Sigma_se,
                          mc_samples=mc_samples, projected=projected)


def divergence_free_program(raw_fs, Omega, aux_sampler, mc_samples=100_000, seed=0):
    """Correct ``raw_fs`` one at a time, each against the state evolution of its predecessors.

    Returns the corrected list and the final :class:`StateEvolution`.
    """
    fixed = []
    for t, f in enumerate(raw_fs):
        if t == 0:
            fixed.append(Nonlinearity(f.func, f.arity, f.lipschitz, True, f.label))
            continue
        se = state_evolution(Omega[:t, :t], fixed, aux_sampler, mc_samples, seed=seed)
        fixed.append(divergence_free_correct(f, se.Sigma, aux_sampler, mc_samples,
                                             seed=derive_seed(seed, "div-free", t)))
    return fixed, state_evolution(Omega, fixed, aux_sampler, mc_samples, seed=seed)


def gram_tolerance(se, rel=0.05, n_se=3.0):
    """Per-entry tolerance ``max(n_se * SE, rel * diagonal scale)``."""
    scale = np.sqrt(np.outer(np.abs(np.diag(se.Sigma)), np.abs(np.diag(se.Sigma))))
    return np.maximum(n_se * se.Sigma_se, rel * scale)


def dynamics_json(se, empirical):
    return json.dumps({"T": se.T, "sigma": se.Sigma.tolist(), "empirical": np.asarray(empirical).tolist(),
                       "mc_se": se.Sigma_se.tolist()}, sort_keys=True)


# --------------------------------------------------------------------------
# centred matrix powers

def gram_power_operator(X, power, shift=0.0):
    """``(X^T X)^power - shift * I`` as a square operator."""
    N = X.cols

    def apply(u):
        v = u
        for _ in range(power):
            v = X.adjoint(X.forward(v))
        return v - shift * u

    return LinearOperator(N, N, apply, apply, label=f"(XtX)^{power}-{shift:.4g}I")


def centered_powers(X, T, moments):
    """``Psi_i = (X^T X)^i - m_i I`` for ``i = 1..T`` given ``moments[i-1] = m_i``."""
    return [gram_power_operator(X, i, moments[i - 1]) for i in range(1, T + 1)]


def centered_power_omega(moments, T):
    """``Omega_ij = m_{i+j} - m_i m_j`` for centred powers of a symmetric Gram matrix."""
    m = np.concatenate([[1.0], np.asarray(moments, dtype=float)])
    if m.size < 2 * T + 1:
        raise ValueError(f"need moments up to order {2 * T}")
    return np.array([[m[i + j] - m[i] * m[j] for j in range(1, T + 1)] for i in range(1, T + 1)])


# --------------------------------------------------------------------------
# proximal gradient as a GFOM

@dataclass
class ProxGFOMResult:
    z: list
    beta: list
    delta: float
    degree: int
    C: float
    w: np.ndarray


def sqrt_chebyshev(k, C):
    """Degree-k Chebyshev interpolant of ``sqrt`` on ``[0, C^2]`` and its sup error."""
    if k < 1:
        raise BadDegree(f"degree must be >= 1, got {k}")
    p = chebyshev.Chebyshev.interpolate(np.sqrt, k, domain=[0.0, C * C])
    grid = np.linspace(0.0, C * C, 10_000)
    delta = float(np.max(np.abs(p(grid) - np.sqrt(grid))))
    return p, delta


def apply_matrix_chebyshev(p, X, w):
    """``p(X^T X) w`` by the Clenshaw recurrence, matrix-free."""
    lo, hi = p.domain
    a, b = 2.0 / (hi - lo), -(hi + lo) / (hi - lo)

    def B(v):  # affine map of X^T X onto [-1, 1]
        return a * X.adjoint(X.forward(v)) + b * v

    c = p.coef
    b1 = np.zeros_like(w)
    b2 = np.zeros_like(w)
    for j in range(len(c) - 1, 0, -1):
        b1, b2 = 2.0 * B(b1) - b2 + c[j] * w, b1
    return B(b1) - b2 + c[0] * w


def implement_prox_gfom(inst, rho, gamma, k, T, C=None, w=None, seed=0):
    """Proximal gradient iterates through the reparameterised GFOM.

    ``z^1 = X^T X beta_star + p_k(X^T X) w`` with ``p_k`` the degree-k
    Chebyshev interpolant of ``sqrt`` on ``[0, C^2]`` and ``w ~ N(0, sigma^2 I)``;
    then ``z^{t+1} = eta(z^t) - gamma X^T X eta(z^t) + gamma z^1`` and
    ``beta^t = eta(z^t; gamma)``.
    """
    X = inst.X
    N = X.cols
    if C is None:
        C = (X.op_norm() if hasattr(X, "op_norm") else op_norm(X)) * (1.0 + 1e-9)
    p, delta = sqrt_chebyshev(k, C)
    if w is None:
        w = inst.noise_sigma * stream(seed, "gfom", "w").standard_normal(N)
    z1 = X.adjoint(X.forward(inst.beta_star)) + apply_matrix_chebyshev(p, X, w)
    aux = np.column_stack([inst.beta_star, w, z1])
    gram = LinearOperator(N, N, lambda u: X.adjoint(X.forward(u)),
                          lambda u: X.adjoint(X.forward(u)), label="XtX")
    neg_step = LinearOperator(N, N, lambda u: -gamma * gram.forward(u),
                              lambda u: -gamma * gram.forward(u), label="-gamma XtX")
    ident = LinearOperator(N, N, lambda u: u.copy(), lambda u: u.copy(), label="I")

    def eta_last(history, aux):
        return prox_vector(rho, history[-1], gamma)

    first = Nonlinearity(lambda h, a: a[:, 2], arity=0, label="z1")
    step_f = Nonlinearity(eta_last, arity=1, lipschitz=1.0, label="eta")
    step_eta = Nonlinearity(lambda h, a: prox_vector(rho, h[-1], gamma) + gamma * a[:, 2],
                            arity=1, lipschitz=1.0, label="eta+gamma z1")
    spec = DynamicsSpec(T=T, operators=[ident] + [neg_step] * (T - 1),
                        f_list=[first] + [step_f] * (T - 1),
                        eta_list=[zero_map()] + [step_eta] * (T - 1), aux=aux)
    zs = run_gfom(spec)
    betas = [prox_vector(rho, z, gamma) for z in zs]
    return ProxGFOMResult(z=zs, beta=betas, delta=delta, degree=k, C=float(C), w=w)


def matched_noise(X_dense, w):
    """Noise ``eps`` with ``X^T eps = sqrt(X^T X) w`` for a dense ``X``.

    With ``X = U diag(s) V^T`` this is ``eps = U_r (V_r^T w)`` over the
    nonzero singular directions, so the direct proximal method driven by
    ``y = X beta_star + eps`` matches the reparameterised GFOM.
    """
    U, s, Vt = np.linalg.svd(np.asarray(X_dense, dtype=float), full_matrices=False)
    r = int(np.sum(s > s.max() * 1e-12)) if s.size else 0
    return U[:, :r] @ (Vt[:r] @ w)
