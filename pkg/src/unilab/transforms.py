"""Matrix-free orthogonal building blocks.

Every operator acts on the leading axis, so a length-N vector and an
``N x b`` block of column vectors are both valid inputs.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import DimensionMismatch, NoConvergence, NonPowerOfTwo
from .rng import stream


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def check_power_of_two(n, what="N"):
    if not isinstance(n, (int, np.integer)) or not is_power_of_two(int(n)):
        raise NonPowerOfTwo(f"{what}={n} is not a power of two")


class LinearOperator:
    """An ``rows x cols`` linear map given by forward/adjoint callables."""

    def __init__(self, rows, cols, forward, adjoint, label=""):
        self.rows = int(rows)
        self.cols = int(cols)
        self._forward = forward
        self._adjoint = adjoint
        self.label = label

    @property
    def shape(self):
        return (self.rows, self.cols)

    def forward(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.cols:
            raise DimensionMismatch(
                f"{self.label or 'operator'} expects {self.cols} rows, got {u.shape[0]}")
        return self._forward(u)

    def adjoint(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.rows:
            raise DimensionMismatch(
                f"{self.label or 'operator'}^T expects {self.rows} rows, got {v.shape[0]}")
        return self._adjoint(v)

    def gram(self, u):
        """Apply ``A^T A``."""
        return self.adjoint(self.forward(u))

    @property
    def T(self):
        return LinearOperator(self.cols, self.rows, self._adjoint, self._forward,
                              label=f"({self.label})^T")

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            return compose(self, other)
        return self.forward(other)

    def to_dense(self):
        return self.forward(np.eye(self.cols))

    def __repr__(self):
        return f"LinearOperator({self.rows}x{self.cols}, {self.label!r})"


def _scale_rows(d, x):
    return d.reshape(d.shape + (1,) * (x.ndim - 1)) * x


def fwht(v):
    """Orthonormal Walsh-Hadamard transform ``H_N v`` (Sylvester ordering)."""
    x = np.array(v, dtype=float)
    n = x.shape[0]
    check_power_of_two(n)
    tail = x.shape[1:]
    h = 1
    while h < n:
        y = x.reshape((n // (2 * h), 2, h) + tail)
        a = y[:, 0].copy()
        y[:, 0] += y[:, 1]
        np.subtract(a, y[:, 1], out=y[:, 1])
        h *= 2
    x *= 1.0 / np.sqrt(n)
    return x


def dct(v):
    """Orthonormal DCT-II, ``Q_N v``."""
    return scipy.fft.dct(np.asarray(v, dtype=float), type=2, norm="ortho", axis=0)


def idct(v):
    """Inverse of :func:`dct`, i.e. ``Q_N^T v``."""
    return scipy.fft.idct(np.asarray(v, dtype=float), type=2, norm="ortho", axis=0)


@dataclass(frozen=True)
class SignDiagonal:
    signs: np.ndarray
    seed: int

    @property
    def n(self):
        return self.signs.shape[0]

    def operator(self):
        s = self.signs.astype(float)
        return diagonal(s, label="S")


def sample_signs(n, seed):
    rng = stream(seed, "signs")
    signs = 2 * rng.integers(0, 2, size=n, dtype=np.int8) - 1
    return SignDiagonal(signs=signs, seed=seed)


@dataclass(frozen=True)
class Permutation:
    """``(P v)_i = v[perm[i]]``."""

    perm: np.ndarray
    seed: int

    @property
    def n(self):
        return self.perm.shape[0]

    def inverse(self):
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.n)
        return inv

    def operator(self):
        perm = self.perm
        inv = self.inverse()
        return LinearOperator(self.n, self.n, lambda u: u[perm], lambda v: v[inv], label="P")


def sample_permutation(n, seed):
    # Generator.permutation is a seeded Fisher-Yates shuffle
    rng = stream(seed, "perm")
    return Permutation(perm=rng.permutation(n), seed=seed)


def identity(n):
    return LinearOperator(n, n, lambda u: u.copy(), lambda v: v.copy(), label="I")


def diagonal(d, label="D"):
    d = np.asarray(d, dtype=float).copy()
    n = d.shape[0]
    return LinearOperator(n, n, lambda u: _scale_rows(d, u), lambda v: _scale_rows(d, v),
                          label=label)


def hadamard(n):
    check_power_of_two(n)
    return LinearOperator(n, n, fwht, fwht, label=f"H_{n}")


def dct_operator(n):
    return LinearOperator(n, n, dct, idct, label=f"Q_{n}")


def dense(A, label="dense"):
    A = np.asarray(A, dtype=float)
    return LinearOperator(A.shape[0], A.shape[1], lambda u: A @ u, lambda v: A.T @ v,
                          label=label)


def scaled(op, c):
    c = float(c)
    return LinearOperator(op.rows, op.cols, lambda u: c * op.forward(u),
                          lambda v: c * op.adjoint(v), label=f"{c:g}*{op.label}")


def restriction(m, n):
    """The ``m x n`` coordinate selector ``[I_m 0]``."""
    if not 1 <= m <= n:
        raise DimensionMismatch(f"cannot restrict {n} coordinates to {m}")

    def adj(v):
        out = np.zeros((n,) + v.shape[1:])
        out[:m] = v
        return out

    return LinearOperator(m, n, lambda u: u[:m].copy(), adj, label=f"[I_{m} 0]")


def compose(*ops):
    """Product ``ops[0] @ ops[1] @ ... @ ops[-1]`` (forward applies right to left)."""
    if not ops:
        raise DimensionMismatch("compose needs at least one operator")
    for left, right in zip(ops[:-1], ops[1:]):
        if left.cols != right.rows:
            raise DimensionMismatch(
                f"cannot compose {left.label} ({left.rows}x{left.cols}) with "
                f"{right.label} ({right.rows}x{right.cols})")

    def fwd(u):
        for op in reversed(ops):
            u = op.forward(u)
        return u

    def adj(v):
        for op in ops:
            v = op.adjoint(v)
        return v

    label = " ".join(op.label for op in ops)
    return LinearOperator(ops[0].rows, ops[-1].cols, fwd, adj, label=label)


def hstack(ops):
    """Block row ``[A_1 A_2 ... A_L]``."""
    rows = ops[0].rows
    if any(op.rows != rows for op in ops):
        raise DimensionMismatch("hstack blocks must share their row count")
    bounds = np.cumsum([0] + [op.cols for op in ops])

    def fwd(u):
        out = ops[0].forward(u[bounds[0]:bounds[1]])
        for op, a, b in zip(ops[1:], bounds[1:-1], bounds[2:]):
            out = out + op.forward(u[a:b])
        return out

    def adj(v):
        return np.concatenate([op.adjoint(v) for op in ops], axis=0)

    return LinearOperator(rows, int(bounds[-1]), fwd, adj,
                          label="[" + " | ".join(op.label for op in ops) + "]")


def op_norm(A, tol=1e-8, max_iter=1000, seed=0):
    """Largest singular value of ``A`` by power iteration on ``A^T A``.

    Convergence is declared when the Rayleigh quotient changes by less than
    ``tol`` relative to its current value. The Rayleigh quotient never
    exceeds ``||A||^2``, so the estimate is a lower bound up to rounding.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    x = stream(seed, "op_norm").standard_normal(A.cols)
    x /= np.linalg.norm(x)
    rq = None
    for _ in range(max_iter):
        y = A.forward(x)
        new = float(y @ y)
        if rq is not None and abs(new - rq) <= tol * new:
            return float(np.sqrt(new))
        rq = new
        x = A.adjoint(y)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return 0.0
        x /= nx
    raise NoConvergence(f"power iteration did not settle in {max_iter} steps",
                        estimate=float(np.sqrt(rq)))
