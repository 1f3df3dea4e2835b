"""Separable convex penalties and their proximal maps.

``prox(rho, x, gamma)`` returns ``argmin_z gamma * rho(z) + (x - z)^2 / 2``.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import BadGamma, NegativeLambda, ProxDiverged
from .rng import stream

KINDS = ("elastic_net", "l1", "ridge", "zero", "custom")


@dataclass(frozen=True)
class Regularizer:
    kind: str
    lambda1: float = 0.0
    lambda2: float = 0.0
    func: Optional[Callable] = None
    prox_func: Optional[Callable] = None
    subgrad_bound: Optional[Callable] = None
    kappa_custom: float = 0.0
    even_custom: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise NegativeLambda("penalty weights must be nonnegative")

    @property
    def kappa(self):
        """Strong-convexity constant."""
        if self.kind == "custom":
            return self.kappa_custom
        return 2.0 * self.lambda2

    @property
    def is_even(self):
        return self.even_custom if self.kind == "custom" else True

    def value(self, x):
        """Coordinatewise penalty ``rho(x)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "custom":
            return np.vectorize(self.func, otypes=[float])(x)
        return self.lambda1 * np.abs(x) + self.lambda2 * x * x

    def total(self, x):
        return float(np.sum(self.value(x)))

    def to_dict(self):
        return {"kind": self.kind, "lambda1": self.lambda1, "lambda2": self.lambda2}


def elastic_net(lambda1, lambda2):
    return Regularizer("elastic_net", float(lambda1), float(lambda2))


def l1(lambda1):
    return Regularizer("l1", float(lambda1), 0.0)


def ridge(lambda2):
    return Regularizer("ridge", 0.0, float(lambda2))


def zero():
    return Regularizer("zero")


def custom(func, prox_func=None, subgrad_bound=None, kappa=0.0, even=False,
           grid=np.linspace(-10, 10, 201)):
    """Penalty given by a scalar function.

    Without ``prox_func`` the prox is computed numerically; ``subgrad_bound``
    must then map ``x`` to a bound on ``|rho'|`` over the interval
    ``[x - gamma*g, x + gamma*g]`` used as the search bracket.
    """
    rho = Regularizer("custom", func=func, prox_func=prox_func, subgrad_bound=subgrad_bound,
                      kappa_custom=float(kappa), even_custom=bool(even))
    if not midpoint_convex(rho, grid):
        raise ValueError("custom penalty fails the sampled midpoint-convexity check")
    if prox_func is None and subgrad_bound is None:
        raise ValueError("custom penalty without a prox needs a subgradient bound")
    return rho


def from_dict(spec):
    kind = spec.get("kind", "elastic_net")
    l1_ = float(spec.get("lambda1", 0.0))
    l2_ = float(spec.get("lambda2", 0.0))
    if kind == "elastic_net":
        return elastic_net(l1_, l2_)
    if kind == "l1":
        return l1(l1_)
    if kind == "ridge":
        return ridge(l2_)
    if kind == "zero":
        return zero()
    raise ValueError(f"regularizer kind {kind!r} cannot be built from a config")


def midpoint_convex(rho, grid):
    """Sampled check ``rho((a+b)/2) <= (rho(a) + rho(b))/2`` over grid pairs."""
    grid = np.asarray(grid, dtype=float)
    vals = rho.value(grid)
    if not np.all(np.isfinite(vals)):
        return False
    a, b = np.meshgrid(grid, grid)
    mid = rho.value((a + b) / 2)
    va, vb = np.meshgrid(vals, vals)
    slack = 1e-9 * (1 + np.abs(va) + np.abs(vb))
    return bool(np.all(mid <= (va + vb) / 2 + slack))


def _numeric_prox_scalar(rho, x, gamma, tol=1e-10):
    g = float(rho.subgrad_bound(x))
    lo, hi = x - gamma * g, x + gamma * g
    if hi - lo <= tol:
        return x

    def obj(z):
        return gamma * rho.func(z) + 0.5 * (x - z) ** 2

    res = minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                          options={"xatol": tol, "maxiter": 500})
    z = float(res.x)
    if not res.success or not np.isfinite(z):
        raise ProxDiverged(f"bounded search failed at x={x}")
    # convexity: descending past either edge means the bound g was too small
    step = 1e-6 * (hi - lo)
    if obj(lo - step) < obj(lo) or obj(hi + step) < obj(hi):
        raise ProxDiverged(f"minimiser escaped the bracket [{lo}, {hi}] at x={x}")
    return z


def prox_vector(rho, x, gamma):
    """Coordinatewise proximal map ``eta(x; gamma)``."""
    if not gamma > 0:
        raise BadGamma(f"gamma must be positive, got {gamma}")
    x = np.asarray(x, dtype=float)
    if rho.kind == "zero":
        return x.copy()
    if rho.kind == "custom":
        if rho.prox_func is not None:
            return np.asarray(rho.prox_func(x, gamma), dtype=float)
        flat = [_numeric_prox_scalar(rho, float(v), gamma) for v in x.ravel()]
        return np.asarray(flat).reshape(x.shape)
    shrink = np.maximum(np.abs(x) - gamma * rho.lambda1, 0.0)
    return np.sign(x) * shrink / (1.0 + 2.0 * gamma * rho.lambda2)


def prox(rho, x, gamma):
    """Scalar proximal map."""
    return float(prox_vector(rho, np.array([x], dtype=float), gamma)[0])


def check_nonexpansive(rho, gamma, pairs=10_000, seed=0, scale=10.0):
    """Largest observed ``|eta(x) - eta(y)| / |x - y|`` over random pairs.

    Pairs mix wide and very close separations so both the threshold region
    and the linear region are probed.
    """
    rng = stream(seed, "nonexpansive")
    x = scale * rng.standard_normal(pairs)
    gap = rng.standard_normal(pairs) * 10.0 ** rng.uniform(-4, 1, pairs)
    y = x + gap
    keep = x != y
    x, y = x[keep], y[keep]
    ratio = np.abs(prox_vector(rho, x, gamma) - prox_vector(rho, y, gamma)) / np.abs(x - y)
    return float(np.max(ratio))
