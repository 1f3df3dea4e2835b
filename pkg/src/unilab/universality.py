"""Finite-N diagnostics for spectral universality classes.

For ``X = J S`` the class conditions ask that the Gram powers ``(J^T J)^k``
be close to scaled identities in the entrywise max norm, with normalised
traces converging to the moments of a target measure. This module
estimates those traces and deviations matrix-free, computes the target
moments, and does the same for the sign-conjugated operator families that
drive VAMP/GFOM iterations.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .ensembles import SensingOperator, SpectralMeasure
from .errors import NoConvergence, UnsupportedKind
from .rng import stream
from .transforms import LinearOperator, op_norm

EXACT_MAX_N = 4096
DEFAULT_PROBES = 64
DEFAULT_SAMPLE_COLS = 256
BLOCK = 256


def _linop(J):
    return J.op if isinstance(J, SensingOperator) else J


def _blocks(cols, size=BLOCK):
    cols = np.asarray(cols)
    for a in range(0, cols.size, size):
        yield cols[a:a + size]


def _basis_block(N, idx):
    E = np.zeros((N, idx.size))
    E[idx, np.arange(idx.size)] = 1.0
    return E


def _use_exact(N, exact):
    return N <= EXACT_MAX_N if exact is None else bool(exact)


def _gram_power_quadratic(J, V, k):
    """``v^T (J^T J)^k v`` for each column of ``V`` using ``ceil(k/2)`` Gram steps."""
    for _ in range(k // 2):
        V = J.adjoint(J.forward(V))
    if k % 2:
        V = J.forward(V)
    return np.sum(V * V, axis=0)


# --------------------------------------------------------------------------
# moments and deviations

def empirical_moment(J, k, probes=DEFAULT_PROBES, seed=0, exact=None, return_se=False):
    """``Tr[(J^T J)^k] / N``.

    Exact (sum over all basis vectors) when ``N <= 4096`` unless ``exact``
    says otherwise; Hutchinson with Rademacher probes otherwise. With
    ``return_se`` also returns the standard error (0 in exact mode).
    """
    if k < 1 or probes < 1:
        raise ValueError("need k >= 1 and probes >= 1")
    J = _linop(J)
    N = J.cols
    if _use_exact(N, exact):
        total = 0.0
        for idx in _blocks(np.arange(N)):
            total += float(np.sum(_gram_power_quadratic(J, _basis_block(N, idx), k)))
        est, se = total / N, 0.0
    else:
        rng = stream(seed, "hutchinson", k)
        vals = []
        for a in range(0, probes, BLOCK):
            b = min(probes, a + BLOCK) - a
            Z = 2.0 * rng.integers(0, 2, size=(N, b)) - 1.0
            vals.append(_gram_power_quadratic(J, Z, k) / N)
        vals = np.concatenate(vals)
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / np.sqrt(probes)) if probes > 1 else float("inf")
    return (est, se) if return_se else est


def _sample_columns(N, sample_cols, seed, exact):
    if _use_exact(N, exact):
        return np.arange(N), True
    if not 1 <= sample_cols <= N:
        raise ValueError("sample_cols must lie in [1, N]")
    cols = stream(seed, "columns").choice(N, size=sample_cols, replace=False)
    return np.sort(cols), False


def gram_power_scan(J, ks, sample_cols=DEFAULT_SAMPLE_COLS, seed=0, exact=None):
    """Columns of ``(J^T J)^k`` for ``k`` up to ``max(ks)`` in one pass.

    Returns ``(cols, exact, diag_sums, col_max)``: ``diag_sums[k]`` sums the
    diagonal entries over the scanned columns and ``col_max[k]`` holds, per
    column, the largest off-diagonal magnitude and the diagonal entry.
    """
    J = _linop(J)
    N = J.cols
    cols, is_exact = _sample_columns(N, sample_cols, seed, exact)
    kmax = max(ks)
    diag = {k: [] for k in range(1, kmax + 1)}
    off = {k: [] for k in range(1, kmax + 1)}
    for idx in _blocks(cols):
        V = _basis_block(N, idx)
        pos = np.arange(idx.size)
        for k in range(1, kmax + 1):
            V = J.adjoint(J.forward(V))
            d = V[idx, pos].copy()
            W = np.abs(V)
            W[idx, pos] = 0.0
            diag[k].append(d)
            off[k].append(W.max(axis=0))
    diag = {k: np.concatenate(v) for k, v in diag.items()}
    off = {k: np.concatenate(v) for k, v in off.items()}
    return cols, is_exact, diag, off


def deviation_inf_norm(J, k, sample_cols=DEFAULT_SAMPLE_COLS, seed=0, exact=None, m_hat=None):
    """``max |(J^T J)^k - m_hat_k I|`` over the scanned columns.

    Exact over all columns when ``N <= 4096``; otherwise ``sample_cols``
    random columns are scanned and the result is a lower bound.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    J = _linop(J)
    _, is_exact, diag, off = gram_power_scan(J, [k], sample_cols, seed, exact)
    if m_hat is None:
        m_hat = float(diag[k].mean()) if is_exact else empirical_moment(J, k, seed=seed)
    return float(max(off[k].max(), np.abs(diag[k] - m_hat).max()))


# --------------------------------------------------------------------------
# target moments

def _compositions(k, L):
    """All tuples of L nonnegative integers summing to k."""
    if L == 1:
        yield (k,)
        return
    for first in range(k + 1):
        for rest in _compositions(k - first, L - 1):
            yield (first,) + rest


def mask_moment_exact(L, dist, k):
    """``E[R^k] / L`` for ``R = sum_l D_l^2`` by multinomial expansion."""
    total = 0.0
    for js in _compositions(k, L):
        coef = math.factorial(k)
        term = 1.0
        for j in js:
            coef //= math.factorial(j)
            term *= dist.even_moment(j)
        total += coef * term
    return total / L


def mask_moment_mc(L, dist, k, mc_samples=10 ** 6, seed=0, return_se=False):
    rng = stream(seed, "mask-moment", k)
    R = np.sum(dist.sample(rng, (L, mc_samples)) ** 2, axis=0)
    vals = R ** k / L
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(mc_samples))
    return (est, se) if return_se else est


def atoms_of(mu, mc_samples=10 ** 5, seed=0):
    """Atoms and weights representing ``mu`` (Monte Carlo draws for mask laws)."""
    if mu.kind == "bernoulli":
        return np.array([0.0, 1.0]), np.array([1 - mu.alpha, mu.alpha])
    if mu.kind == "empirical":
        return mu.atoms, mu.weights
    if mu.kind == "mask":
        rng = stream(seed, "mask-atoms")
        R = np.sum(mu.dist.sample(rng, (mu.L, mc_samples)) ** 2, axis=0)
        atoms = np.concatenate([[0.0], R])
        weights = np.concatenate([[1 - 1 / mu.L], np.full(mc_samples, 1 / (mu.L * mc_samples))])
        return atoms, weights
    raise UnsupportedKind(f"no atomic representation for {mu.kind!r}")


def target_moment(mu, k, mc_samples=10 ** 6, seed=0, method="auto"):
    """``int lambda^k mu(d lambda)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if mu.kind == "bernoulli":
        return mu.alpha
    if mu.kind == "mask":
        if method != "mc" and mu.dist.even_moment(1) is not None:
            return mask_moment_exact(mu.L, mu.dist, k)
        return mask_moment_mc(mu.L, mu.dist, k, mc_samples, seed)
    if mu.kind == "empirical":
        return float(np.dot(mu.weights, mu.atoms ** k))
    if mu.kind == "free_mp":
        return float(free_mp_moments(mu.base, mu.alpha, k, seed=seed)[k - 1])
    raise UnsupportedKind(f"no moments for measure kind {mu.kind!r}")


# --------------------------------------------------------------------------
# Stieltjes transform of pi boxtimes MP(alpha)

def stieltjes_mp_convolution(pi, alpha, z, tol=1e-12, max_iter=100_000, damping=0.5,
                             mc_samples=10 ** 5, seed=0, _atoms=None):
    """Solve ``1/m = -z + alpha * int lambda / (1 + lambda m) pi(d lambda)``.

    Damped fixed-point iteration from ``m = i``. Returns ``m(z)`` with
    ``Im m > 0`` for ``Im z > 0``.
    """
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("z must lie in the upper half plane")
    atoms, weights = _atoms if _atoms is not None else atoms_of(pi, mc_samples, seed)

    def rhs(m):
        return 1.0 / (-z + alpha * np.sum(weights * atoms / (1.0 + atoms * m)))

    m = 1j
    for _ in range(max_iter):
        new = (1 - damping) * m + damping * rhs(m)
        if abs(new - m) <= tol * max(abs(new), 1e-300):
            m = new
            resid = abs(1.0 / m - (-z + alpha * np.sum(weights * atoms / (1.0 + atoms * m))))
            if resid <= max(tol, 1e-15) * max(1.0, abs(1.0 / m)) * 10:
                return m
        m = new
    raise NoConvergence(f"Stieltjes fixed point did not converge at z={z}", estimate=m)


def stieltjes_residual(pi, alpha, z, m, mc_samples=10 ** 5, seed=0):
    atoms, weights = atoms_of(pi, mc_samples, seed)
    return abs(1.0 / m - (-complex(z) + alpha * np.sum(weights * atoms / (1.0 + atoms * m))))


def free_mp_moments(pi, alpha, kmax, npts=256, seed=0, mc_samples=10 ** 5):
    """Moments ``m_1..m_kmax`` of ``pi boxtimes MP(alpha)`` from its Stieltjes transform.

    ``m(z) = -sum_k m_k z^{-k-1}`` outside the support, so the moments are
    contour integrals over a circle enclosing the support (trapezoid rule;
    the lower half circle follows from ``m(conj z) = conj m(z)``).
    """
    atoms, weights = atoms_of(pi, mc_samples, seed)
    bound = float(np.max(atoms)) * (1 + np.sqrt(alpha)) ** 2 if atoms.size else 1.0
    r = 1.5 * bound + 0.5
    theta = 2 * np.pi * (np.arange(npts // 2) + 0.5) / npts
    zs = r * np.exp(1j * theta)
    ms = np.array([stieltjes_mp_convolution(pi, alpha, z, tol=1e-15, _atoms=(atoms, weights))
                   for z in zs])
    out = []
    for k in range(1, kmax + 1):
        upper = ms * zs ** (k + 1)
        # lower half circle contributes the complex conjugates
        out.append(float(-2.0 * np.sum(upper.real) / npts))
    return np.array(out)


# --------------------------------------------------------------------------
# class reports

@dataclass(frozen=True)
class TolProfile:
    c1: float = 10.0
    c2: float = 10.0
    eps0: float = 0.1

    def moment_tol(self, N, scale=1.0):
        return self.c1 * N ** -0.5 * scale

    def deviation_tol(self, N):
        return self.c2 * N ** (-0.5 + self.eps0)


@dataclass
class MomentRow:
    k: int
    empirical: float
    target: float
    deviation: float
    moment_tol: float
    deviation_tol: float
    moment_ok: bool
    deviation_ok: bool


@dataclass
class ClassReport:
    ensemble: str
    N: int
    M: int
    op_norm: float
    moments: list
    passed: bool
    sign_invariant: bool = True
    exact: bool = True
    op_norm_converged: bool = True
    tol_profile: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "ensemble": self.ensemble,
            "N": self.N,
            "M": self.M,
            "op_norm": self.op_norm,
            "moments": [{"k": r.k, "empirical": r.empirical, "target": r.target,
                         "deviation": r.deviation} for r in self.moments],
            "pass": self.passed,
            "sign_invariant": self.sign_invariant,
            "exact": self.exact,
            "op_norm_converged": self.op_norm_converged,
            "tolerances": [{"k": r.k, "moment": r.moment_tol, "deviation": r.deviation_tol}
                           for r in self.moments],
            "tol_profile": self.tol_profile,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def class_report(X, mu, ks=range(1, 7), tol_profile=TolProfile(), probes=DEFAULT_PROBES,
                 sample_cols=DEFAULT_SAMPLE_COLS, seed=0, exact=None, mc_samples=10 ** 6):
    """Compare ``X`` against the class ``U(mu)`` at finite N.

    Passes when every ``|m_hat_k - m_k| <= c1 N^-1/2 max(1, |m_k|)`` and every
    deviation ``<= c2 N^(-1/2 + eps0)``. When ``X`` was built without its
    random sign factor, ``sign_invariant`` is False; the moment checks still
    run since the spectrum is unaffected.
    """
    ks = sorted(set(int(k) for k in ks))
    J = _linop(X)
    N, M = J.cols, J.rows
    converged = True
    if isinstance(X, SensingOperator):
        norm = X.op_norm(seed=seed)
    else:
        try:
            norm = op_norm(J, seed=seed)
        except NoConvergence as exc:
            norm, converged = exc.estimate, False
    cols, is_exact, diag, off = gram_power_scan(J, ks, sample_cols, seed, exact)
    rows = []
    for k in ks:
        if is_exact:
            m_hat = float(diag[k].sum() / N)
        else:
            m_hat = empirical_moment(J, k, probes=probes, seed=seed, exact=False)
        dev = float(max(off[k].max(), np.abs(diag[k] - m_hat).max()))
        m_k = target_moment(mu, k, mc_samples=mc_samples, seed=seed)
        mtol = tol_profile.moment_tol(N, max(1.0, abs(m_k)))
        dtol = tol_profile.deviation_tol(N)
        rows.append(MomentRow(k, m_hat, m_k, dev, mtol, dtol,
                              abs(m_hat - m_k) <= mtol, dev <= dtol))
    passed = all(r.moment_ok and r.deviation_ok for r in rows)
    signed = X.signed if isinstance(X, SensingOperator) else True
    tag = X.ensemble if isinstance(X, SensingOperator) else J.label
    return ClassReport(ensemble=tag, N=N, M=M, op_norm=float(norm), moments=rows, passed=passed,
                       sign_invariant=signed, exact=is_exact, op_norm_converged=converged,
                       tol_profile=asdict(tol_profile))


# --------------------------------------------------------------------------
# semi-random families

def product_operator(psis, subset):
    """``Psi_B = Psi_{b_|B|} ... Psi_{b_1}`` for sorted ``B``; identity for ``B = ()``."""
    subset = tuple(sorted(subset))
    N = psis[0].cols

    def fwd(u):
        for b in subset:
            u = psis[b].forward(u)
        return u.copy() if not subset else u

    def adj(v):
        for b in reversed(subset):
            v = psis[b].adjoint(v)
        return v.copy() if not subset else v

    return LinearOperator(N, N, fwd, adj, label="Psi_" + "".join(str(b + 1) for b in subset))


@dataclass
class SemiRandomReport:
    N: int
    omega_hat: np.ndarray
    deviations: np.ndarray
    entry_max: np.ndarray
    exact: bool
    deviation_tol: float
    delocalized: list
    flat: bool
    op_norms: list = field(default_factory=list)
    strong: dict = field(default_factory=dict)

    def is_symmetric(self, atol=1e-10):
        return bool(np.allclose(self.omega_hat, self.omega_hat.T, atol=atol))

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh((self.omega_hat + self.omega_hat.T) / 2).min())


def _pair_statistics(ops, cols, N, exact, probes, seed):
    """Omega-hat, pair deviations and entry maxima for a list of square operators."""
    T = len(ops)
    if exact:
        omega = np.zeros((T, T))
    entry = np.zeros(T)
    dev_cols = {}
    diag_vals = {}
    for idx in _blocks(cols):
        E = _basis_block(N, idx)
        pos = np.arange(idx.size)
        fw = [op.forward(E) for op in ops]
        ad = [op.adjoint(E) for op in ops]
        for i in range(T):
            entry[i] = max(entry[i], float(np.abs(fw[i]).max()))
        for i, j in product(range(T), range(T)):
            if exact:
                omega[i, j] += float(np.sum(fw[i] * fw[j]))
            # columns of Psi_i Psi_j^T
            C = ops[i].forward(ad[j])
            d = C[idx, pos].copy()
            C = np.abs(C)
            C[idx, pos] = 0.0
            dev_cols.setdefault((i, j), []).append(C.max(axis=0))
            diag_vals.setdefault((i, j), []).append(d)
    if exact:
        omega /= N
    else:
        omega = np.zeros((T, T))
        rng = stream(seed, "omega-hat")
        Z = 2.0 * rng.integers(0, 2, size=(N, probes)) - 1.0
        fz = [op.forward(Z) for op in ops]
        for i, j in product(range(T), range(T)):
            omega[i, j] = float(np.mean(np.sum(fz[i] * fz[j], axis=0)) / N)
    dev = np.zeros((T, T))
    for (i, j), chunks in dev_cols.items():
        d = np.concatenate(diag_vals[(i, j)])
        dev[i, j] = max(float(np.concatenate(chunks).max()), float(np.abs(d - omega[i, j]).max()))
    return omega, dev, entry


def semirandom_report(psis, sample_cols=DEFAULT_SAMPLE_COLS, seed=0, exact=None, probes=256,
                      subsets=None, tol_profile=TolProfile()):
    """Diagnostics for ``M_i = S Psi_i S`` built from square ``psis``.

    Reports ``Omega_hat_ij = Tr(Psi_i Psi_j^T)/N``, the deviations
    ``|Psi_i Psi_j^T - Omega_hat_ij I|_inf`` and entrywise maxima
    ``|Psi_i|_inf`` (delocalisation). With ``subsets`` (index tuples, ``()``
    for the identity) the same statistics are computed for the products
    ``Psi_B`` and stored in ``strong`` keyed by ``(B, B')``.
    """
    psis = [_linop(p) for p in psis]
    N = psis[0].cols
    for p in psis:
        if p.rows != N or p.cols != N:
            raise ValueError("all Psi must be square with the same N")
    cols, is_exact = _sample_columns(N, sample_cols, seed, exact)
    omega, dev, entry = _pair_statistics(psis, cols, N, is_exact, probes, seed)
    dtol = tol_profile.deviation_tol(N)
    norms = []
    for p in psis:
        try:
            norms.append(op_norm(p, seed=seed))
        except NoConvergence as exc:
            norms.append(exc.estimate)
    report = SemiRandomReport(N=N, omega_hat=omega, deviations=dev, entry_max=entry,
                              exact=is_exact, deviation_tol=dtol,
                              delocalized=[bool(e <= dtol) for e in entry],
                              flat=bool(np.all(dev <= dtol)), op_norms=norms)
    if subsets:
        subsets = [tuple(sorted(s)) for s in subsets]
        prods = [product_operator(psis, s) for s in subsets]
        s_omega, s_dev, _ = _pair_statistics(prods, cols, N, is_exact, probes, seed)
        for a, b in product(range(len(subsets)), repeat=2):
            report.strong[(subsets[a], subsets[b])] = (float(s_omega[a, b]), float(s_dev[a, b]))
    return report
