"""Samplers for structured sensing ensembles.

Each sampler returns a :class:`SensingOperator`: the matrix-free operator,
its provenance, the eigenvalues of ``X^T X`` when they are known in closed
form, and the spectral measure the ensemble is expected to follow.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import transforms as tf
from .errors import (BadAspect, DimensionMismatch, ExplicitTooLarge, InvalidL,
                     NegativeLambda, UnsupportedEnsemble, UnsupportedKind)
from .rng import derive_seed, stream

EXPLICIT_HAAR_MAX = 2048
HAAR_MODES = ("explicit", "lazy", "revealed")


# --------------------------------------------------------------------------
# spectral measures and mask laws

@dataclass(frozen=True)
class MaskDistribution:
    """Symmetric bounded law for the diagonal mask entries.

    Draws sample ``|D|`` and an independent sign, so ``D`` and ``-D`` are
    identically distributed by construction.
    """

    kind: str = "uniform"
    bound: float = 1.0
    magnitude: Optional[Callable] = None  # custom: (rng, size) -> |D| samples

    def __post_init__(self):
        if self.kind not in ("uniform", "rademacher", "custom"):
            raise UnsupportedKind(f"unknown mask distribution {self.kind!r}")
        if self.kind == "custom" and self.magnitude is None:
            raise UnsupportedKind("custom mask distribution needs a magnitude sampler")

    def sample(self, rng, size):
        if self.kind == "uniform":
            mag = rng.random(size)
        elif self.kind == "rademacher":
            mag = np.ones(size)
        else:
            mag = np.abs(np.asarray(self.magnitude(rng, size), dtype=float))
            if np.any(mag > self.bound):
                raise ValueError("custom mask sampler exceeded its declared bound")
        sign = 2.0 * rng.integers(0, 2, size=size) - 1.0
        return sign * mag

    def even_moment(self, j):
        """``E[D^(2j)]`` when known in closed form, else ``None``."""
        if self.kind == "uniform":
            return 1.0 / (2 * j + 1)
        if self.kind == "rademacher":
            return 1.0
        return None


UNIFORM = MaskDistribution("uniform")
RADEMACHER = MaskDistribution("rademacher")


@dataclass(frozen=True)
class SpectralMeasure:
    """Compactly supported probability measure on ``[0, inf)``.

    kinds: ``bernoulli`` (mass ``alpha`` at 1, rest at 0), ``mask``
    (``(1 - 1/L) delta_0 + (1/L) law(R)`` with ``R = sum of L squared mask
    entries``), ``empirical`` (weighted atoms) and ``free_mp`` (free
    multiplicative convolution of ``base`` with Marchenko-Pastur(alpha)).
    """

    kind: str
    alpha: float = 1.0
    L: int = 1
    dist: MaskDistribution = UNIFORM
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    base: Optional["SpectralMeasure"] = None

    def support_bound(self):
        if self.kind == "bernoulli":
            return 1.0
        if self.kind == "mask":
            return self.L * self.dist.bound ** 2
        if self.kind == "empirical":
            return float(np.max(self.atoms)) if self.atoms.size else 0.0
        if self.kind == "free_mp":
            a = self.alpha
            return self.base.support_bound() * (1 + np.sqrt(a)) ** 2
        raise UnsupportedKind(self.kind)


def bernoulli(alpha):
    if not 0 <= alpha <= 1:
        raise ValueError("Bernoulli parameter must lie in [0, 1]")
    return SpectralMeasure("bernoulli", alpha=float(alpha))


def mask_measure(L, dist=UNIFORM):
    if L < 1:
        raise InvalidL(f"L={L} < 1")
    return SpectralMeasure("mask", L=int(L), dist=dist)


def empirical(atoms, weights=None):
    atoms = np.asarray(atoms, dtype=float).ravel()
    if np.any(atoms < 0):
        raise NegativeLambda("spectral atoms must be nonnegative")
    if weights is None:
        weights = np.full(atoms.shape, 1.0 / max(atoms.size, 1))
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.shape != atoms.shape or np.any(weights < 0) or not np.isclose(weights.sum(), 1.0):
        raise ValueError("weights must be nonnegative, match atoms and sum to one")
    return SpectralMeasure("empirical", atoms=atoms, weights=weights)


def free_mp_convolution(pi, alpha):
    if alpha <= 0:
        raise BadAspect("aspect ratio must be positive")
    return SpectralMeasure("free_mp", alpha=float(alpha), base=pi)


# --------------------------------------------------------------------------
# sensing operator record

@dataclass
class SensingOperator:
    op: tf.LinearOperator
    ensemble: str
    seed: int
    lam: Optional[np.ndarray] = None
    aspect: Fraction = Fraction(1)
    measure: Optional[SpectralMeasure] = None
    signed: bool = True
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def rows(self):
        return self.op.rows

    @property
    def cols(self):
        return self.op.cols

    @property
    def shape(self):
        return self.op.shape

    def forward(self, u):
        return self.op.forward(u)

    def adjoint(self, v):
        return self.op.adjoint(v)

    def gram(self, u):
        return self.op.adjoint(self.op.forward(u))

    def to_dense(self):
        return self.op.to_dense()

    def op_norm(self, tol=1e-8, max_iter=1000, seed=0):
        """Exact from ``lam`` when it is recorded, else by power iteration."""
        if self.lam is not None:
            return float(np.sqrt(np.max(self.lam))) if self.lam.size else 0.0
        return tf.op_norm(self.op, tol=tol, max_iter=max_iter, seed=seed)


def _sign_factor(n, seed, signed):
    if not signed:
        return tf.identity(n), None
    signs = tf.sample_signs(n, derive_seed(seed, "signs"))
    return signs.operator(), signs


def _check_lambda(lam, n=None):
    lam = np.asarray(lam, dtype=float).ravel()
    if np.any(lam < 0):
        raise NegativeLambda("lambda entries must be nonnegative")
    if n is not None and lam.shape[0] != n:
        raise DimensionMismatch(f"lambda has length {lam.shape[0]}, expected {n}")
    return lam


# --------------------------------------------------------------------------
# spikes + orthogonal

def sample_spike_ortho(M, kind="dct", seed=0, signed=True):
    """``(1/sqrt 2) [I_M  O_M] S`` with ``O_M`` the DCT or Walsh-Hadamard matrix."""
    if kind == "hadamard":
        tf.check_power_of_two(M, "M")
        ortho = tf.hadamard(M)
        tag = "spike_hwt"
    elif kind == "dct":
        ortho = tf.dct_operator(M)
        tag = "spike_sine"
    else:
        raise UnsupportedKind(f"spike kind must be 'dct' or 'hadamard', got {kind!r}")
    N = 2 * M
    J = tf.scaled(tf.hstack([tf.identity(M), ortho]), 1 / np.sqrt(2))
    S, signs = _sign_factor(N, seed, signed)
    op = tf.compose(J, S)
    op.label = tag if signed else tag + "_unsigned"
    lam = np.concatenate([np.ones(M), np.zeros(M)])
    return SensingOperator(op=op, ensemble=op.label, seed=seed, lam=lam, aspect=Fraction(1, 2),
                           measure=bernoulli(0.5), signed=signed,
                           params={"M": M, "kind": kind}, extras={"signs": signs})


def sample_spike_sine(M, seed=0, signed=True):
    return sample_spike_ortho(M, "dct", seed, signed)


def sample_spike_hwt(M, seed=0, signed=True):
    return sample_spike_ortho(M, "hadamard", seed, signed)


# --------------------------------------------------------------------------
# masked Hadamard

def sample_mask(M, L=2, dist=UNIFORM, seed=0, signed=True):
    """``[D_1 H_M ... D_L H_M] S`` with i.i.d. diagonal masks ``D_l``."""
    tf.check_power_of_two(M, "M")
    if not isinstance(L, (int, np.integer)) or L < 1:
        raise InvalidL(f"L={L} must be a positive integer")
    rng = stream(seed, "masks")
    D = dist.sample(rng, (L, M))
    H = tf.hadamard(M)
    blocks = [tf.compose(tf.diagonal(D[l], label=f"D_{l + 1}"), H) for l in range(L)]
    N = L * M
    S, signs = _sign_factor(N, seed, signed)
    op = tf.compose(tf.hstack(blocks), S)
    op.label = "mask" if signed else "mask_unsigned"
    R = np.sum(D ** 2, axis=0)
    lam = np.concatenate([R, np.zeros(N - M)])
    return SensingOperator(op=op, ensemble=op.label, seed=seed, lam=lam, aspect=Fraction(1, L),
                           measure=mask_measure(L, dist), signed=signed,
                           params={"M": M, "L": L, "dist": dist.kind},
                           extras={"masks": D, "R": R, "signs": signs})


# --------------------------------------------------------------------------
# randomly permuted DCT

def sample_rand_dct(N, lam, seed=0, signed=True):
    """``Lambda^{1/2} P Q_N S``."""
    lam = _check_lambda(lam, N)
    P = tf.sample_permutation(N, derive_seed(seed, "perm"))
    S, signs = _sign_factor(N, seed, signed)
    op = tf.compose(tf.diagonal(np.sqrt(lam), label="Lambda^1/2"), P.operator(),
                    tf.dct_operator(N), S)
    op.label = "rand_dct" if signed else "rand_dct_unsigned"
    return SensingOperator(op=op, ensemble=op.label, seed=seed, lam=lam, aspect=Fraction(1),
                           measure=empirical(lam), signed=signed, params={"N": N},
                           extras={"perm": P, "signs": signs})


# --------------------------------------------------------------------------
# Haar

def haar_explicit_matrix(N, seed):
    """Haar orthogonal ``V`` from the QR factorisation of a Gaussian matrix."""
    if N > EXPLICIT_HAAR_MAX:
        raise ExplicitTooLarge(f"explicit Haar limited to N <= {EXPLICIT_HAAR_MAX}, got {N}")
    G = stream(seed, "haar", "gaussian").standard_normal((N, N))
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.diag(R))


class HouseholderHaar:
    """Haar ``V = H_1 H_2 ... H_{N-1} D`` applied without storing ``V``.

    Reflection ``k`` acts on coordinates ``k..N-1`` and is built from a
    fresh Gaussian vector of length ``N - k``; ``D`` is the sign correction
    that makes the induced ``R`` factor positive. The Gaussian draws are
    regenerated block by block on every application, so memory stays at
    ``O(block * N)`` and each application costs ``O(N^2)``.
    """

    def __init__(self, N, seed, block=64):
        self.N = int(N)
        self.seed = seed
        self.block = block
        self.nblocks = max(1, -(-(self.N - 1) // block))
        last = stream(seed, "haar", "last-sign").integers(0, 2)
        self._last_sign = 2.0 * last - 1.0

    def _block_vectors(self, b):
        """Unit Householder vectors and sign corrections for block ``b``."""
        rng = stream(self.seed, "haar", "reflections", b)
        lo = b * self.block
        hi = min(lo + self.block, self.N - 1)
        out = []
        for k in range(lo, hi):
            x = rng.standard_normal(self.N - k)
            s = 1.0 if x[0] >= 0 else -1.0
            v = x
            v[0] += s * np.linalg.norm(x)
            v /= np.linalg.norm(v)
            out.append((k, v, -s))
        return out

    def signs(self):
        d = np.empty(self.N)
        for b in range(self.nblocks):
            for k, _, s in self._block_vectors(b):
                d[k] = s
        d[self.N - 1] = self._last_sign
        return d

    @staticmethod
    def _reflect(x, k, v):
        seg = x[k:]
        seg -= 2.0 * np.outer(v, v @ seg).reshape(seg.shape)

    def apply_vt(self, u):
        """``V^T u = D H_{N-1} ... H_1 u``."""
        x = np.array(u, dtype=float)
        d = np.empty(self.N)
        for b in range(self.nblocks):
            for k, v, s in self._block_vectors(b):
                self._reflect(x, k, v)
                d[k] = s
        d[self.N - 1] = self._last_sign
        return d.reshape((-1,) + (1,) * (x.ndim - 1)) * x

    def apply_v(self, w):
        """``V w = H_1 ... H_{N-1} D w``."""
        x = np.array(w, dtype=float)
        x[self.N - 1] *= self._last_sign
        for b in reversed(range(self.nblocks)):
            vecs = self._block_vectors(b)
            for k, _, s in vecs:
                x[k] *= s
            for k, v, _ in reversed(vecs):
                self._reflect(x, k, v)
        return x

    def to_dense(self):
        return self.apply_v(np.eye(self.N))


class RevealedHaar:
    """Haar orthogonal ``W`` sampled incrementally as it is queried.

    Keeps orthonormal input directions ``p_j`` and output directions ``r_j``
    with ``W p_j = r_j``. A query ``W u`` splits ``u`` into its component in
    ``span(p)`` and a residual; the residual direction is mapped to a fresh
    uniformly random unit vector orthogonal to ``span(r)``, which is exactly
    the conditional law of a Haar matrix given the pairs revealed so far.
    Adjoint queries work the same way with the roles of ``p`` and ``r``
    swapped. Answers stay consistent with a single orthogonal matrix, and a
    query costs ``O(k N)`` for ``k`` revealed pairs.
    """

    def __init__(self, N, seed, capacity=256):
        self.N = int(N)
        self.rng = stream(seed, "haar", "revealed")
        self.P = np.empty((capacity, self.N))
        self.R = np.empty((capacity, self.N))
        self.k = 0

    def _grow(self):
        cap = min(2 * self.P.shape[0], self.N)
        for name in ("P", "R"):
            old = getattr(self, name)
            new = np.empty((cap, self.N))
            new[:self.k] = old[:self.k]
            setattr(self, name, new)

    @staticmethod
    def _project_out(Q, x):
        """Coefficients ``c`` and residual ``x - Q^T c`` with re-orthogonalisation."""
        c = Q @ x
        r = x - Q.T @ c
        nx = np.linalg.norm(x)
        for _ in range(3):
            nr = np.linalg.norm(r)
            if nr > 0.7 * nx:
                break
            c2 = Q @ r
            c += c2
            r -= Q.T @ c2
            nx = nr
        return c, r

    def _query(self, src, dst, u):
        k = self.k
        c, r = self._project_out(src[:k], u)
        out = dst[:k].T @ c
        nr = np.linalg.norm(r)
        if nr > 1e-13 * np.linalg.norm(u) and k < self.N:
            g = self.rng.standard_normal(self.N)
            _, g = self._project_out(dst[:k], g)
            g /= np.linalg.norm(g)
            src[k] = r / nr
            dst[k] = g
            self.k = k + 1
            out = out + nr * g
        return out

    def _apply(self, x, forward):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self._apply_vec(x, forward)
        return np.stack([self._apply_vec(x[:, j], forward) for j in range(x.shape[1])], axis=1)

    def _apply_vec(self, x, forward):
        if self.k == self.P.shape[0] and self.k < self.N:
            self._grow()
        if forward:
            return self._query(self.P, self.R, x)
        return self._query(self.R, self.P, x)

    def apply_vt(self, u):
        return self._apply(u, True)

    def apply_v(self, w):
        return self._apply(w, False)


def sample_haar(N, lam, seed=0, mode="lazy"):
    """``Lambda^{1/2} V^T`` with ``V`` Haar on ``O(N)``.

    ``mode``: ``explicit`` (dense QR, ``N <= 2048``), ``lazy`` (Householder
    product regenerated per application, ``O(N^2)`` per apply) or
    ``revealed`` (incremental conditional sampling, ``O(kN)`` per apply
    after ``k`` revealed directions; suited to iterative solvers at large N).
    """
    lam = _check_lambda(lam, N)
    root = np.sqrt(lam)
    if mode == "explicit":
        V = haar_explicit_matrix(N, seed)
        vt, v = (lambda u: V.T @ u), (lambda w: V @ w)
        core = V
    elif mode == "lazy":
        core = HouseholderHaar(N, seed)
        vt, v = core.apply_vt, core.apply_v
    elif mode == "revealed":
        core = RevealedHaar(N, seed)
        vt, v = core.apply_vt, core.apply_v
    else:
        raise UnsupportedKind(f"Haar mode must be one of {HAAR_MODES}, got {mode!r}")

    def fwd(u):
        y = vt(u)
        return root.reshape((-1,) + (1,) * (y.ndim - 1)) * y

    def adj(w):
        return v(root.reshape((-1,) + (1,) * (w.ndim - 1)) * w)

    op = tf.LinearOperator(N, N, fwd, adj, label="haar")
    return SensingOperator(op=op, ensemble="haar", seed=seed, lam=lam, aspect=Fraction(1),
                           measure=empirical(lam), signed=True,
                           params={"N": N, "mode": mode}, extras={"V": core})


# --------------------------------------------------------------------------
# partial Hadamard and transformed i.i.d.

def sample_partial_hadamard(M, N, seed=0):
    """``[I_M 0] P^T H_N S``: M uniformly chosen rows of ``H_N``, column signs."""
    tf.check_power_of_two(N, "N")
    if not 1 <= M <= N:
        raise BadAspect(f"need 1 <= M <= N, got M={M}, N={N}")
    P = tf.sample_permutation(N, derive_seed(seed, "perm"))
    S, signs = _sign_factor(N, seed, True)
    op = tf.compose(tf.restriction(M, N), P.operator().T, tf.hadamard(N), S)
    op.label = "partial_hadamard"
    lam = np.concatenate([np.ones(M), np.zeros(N - M)])
    return SensingOperator(op=op, ensemble="partial_hadamard", seed=seed, lam=lam,
                           aspect=Fraction(M, N), measure=bernoulli(M / N),
                           params={"M": M, "N": N}, extras={"perm": P, "signs": signs})


def gaussian_entries(rng, size):
    return rng.standard_normal(size)


def rademacher_entries(rng, size):
    return 2.0 * rng.integers(0, 2, size=size) - 1.0


ENTRY_LAWS = {"gaussian": gaussian_entries, "rademacher": rademacher_entries}


def sample_tiid(T_spec, M, N, entry_dist="gaussian", seed=0):
    """``T Z`` with ``Z`` i.i.d. symmetric unit-variance entries scaled by ``N^{-1/2}``.

    ``T_spec`` is a length-M diagonal or an ``M x M`` dense matrix.
    """
    sampler = ENTRY_LAWS.get(entry_dist, entry_dist) if isinstance(entry_dist, str) else entry_dist
    if isinstance(sampler, str):
        raise UnsupportedKind(f"unknown entry law {entry_dist!r}")
    T = np.asarray(T_spec, dtype=float)
    Z = sampler(stream(seed, "tiid", "Z"), (M, N)) / np.sqrt(N)
    if T.ndim == 1:
        if T.shape[0] != M:
            raise DimensionMismatch("diagonal T must have length M")
        X = T[:, None] * Z
        tt = T ** 2
    elif T.shape == (M, M):
        X = T @ Z
        tt = np.linalg.eigvalsh(T.T @ T)
    else:
        raise DimensionMismatch("T must be a length-M diagonal or an M x M matrix")
    pi_n = empirical(np.clip(tt, 0.0, None))
    op = tf.dense(X, label="tiid")
    return SensingOperator(op=op, ensemble="tiid", seed=seed, lam=None, aspect=Fraction(M, N),
                           measure=free_mp_convolution(pi_n, M / N),
                           params={"M": M, "N": N}, extras={"pi": pi_n, "matrix": X})


# --------------------------------------------------------------------------
# unsigned variants and tag lookup

def unsigned_variant(X):
    """The same draw with the random sign diagonal replaced by the identity."""
    tag = X.ensemble.removesuffix("_unsigned")
    if tag == "spike_hwt":
        return sample_spike_hwt(X.params["M"], seed=X.seed, signed=False)
    if tag == "rand_dct":
        return sample_rand_dct(X.params["N"], X.lam, seed=X.seed, signed=False)
    raise UnsupportedEnsemble(f"no unsigned variant for {X.ensemble!r}")


def spike_lambda(N):
    """Eigenvalues of ``X^T X`` for the spikes + orthogonal frames: M ones then M zeros."""
    M = N // 2
    return np.concatenate([np.ones(M), np.zeros(N - M)])


def mask_lambda(N, L=2, dist=UNIFORM, seed=0):
    """Eigenvalues of ``X^T X`` for a mask draw (``sum_l D_l^2`` padded with zeros)."""
    return sample_mask(N // L, L, dist, seed).lam


ENSEMBLE_TAGS = ("spike_sine", "spike_hwt", "mask", "rand_dct", "haar", "partial_hadamard",
                 "tiid", "spike_hwt_unsigned", "rand_dct_unsigned")


def resolve_lambda(spec, N, seed):
    """Eigenvalue vector named by a config entry: ``spike`` / ``ones`` / ``mask`` / array."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    if isinstance(spec, dict):
        kind = spec.get("kind", "spike")
        if kind in ("spike", "spike_sine"):
            return spike_lambda(N)
        if kind == "ones":
            return np.ones(N)
        if kind == "bernoulli":
            M = int(round(spec.get("alpha", 0.5) * N))
            return np.concatenate([np.ones(M), np.zeros(N - M)])
        if kind == "mask":
            dist = MaskDistribution(spec.get("dist", "uniform"))
            return mask_lambda(N, spec.get("L", 2), dist, seed)
        raise UnsupportedKind(f"unknown lambda kind {kind!r}")
    return _check_lambda(spec, N)


def sample_ensemble(tag, N, seed=0, **params):
    """Sample an ensemble by its string tag with N columns."""
    if tag in ("spike_sine", "spike_hwt", "spike_hwt_unsigned"):
        kind = "dct" if tag == "spike_sine" else "hadamard"
        return sample_spike_ortho(N // 2, kind, seed, signed=not tag.endswith("_unsigned"))
    if tag == "mask":
        L = params.get("L", 2)
        if N % L:
            raise BadAspect(f"N={N} not divisible by L={L}")
        return sample_mask(N // L, L, MaskDistribution(params.get("dist", "uniform")), seed)
    if tag in ("rand_dct", "rand_dct_unsigned"):
        lam = resolve_lambda(params.get("lambda", "spike"), N, seed)
        return sample_rand_dct(N, lam, seed, signed=tag == "rand_dct")
    if tag == "haar":
        lam = resolve_lambda(params.get("lambda", "spike"), N, seed)
        mode = params.get("mode") or ("explicit" if N <= 512 else "revealed")
        return sample_haar(N, lam, seed, mode=mode)
    if tag == "partial_hadamard":
        M = int(round(params.get("alpha", 0.5) * N))
        return sample_partial_hadamard(M, N, seed)
    if tag == "tiid":
        M = int(round(params.get("alpha", 1.0) * N))
        T = params.get("T", np.ones(M))
        return sample_tiid(T, M, N, params.get("entries", "gaussian"), seed)
    raise UnsupportedEnsemble(f"unknown ensemble tag {tag!r}")

