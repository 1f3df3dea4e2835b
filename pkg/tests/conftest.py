import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("unilab", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("unilab")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def adjoint_gap(op, rng, probes=32):
    """Worst relative inner-product mismatch between forward and adjoint."""
    worst = 0.0
    for _ in range(probes):
        u = rng.standard_normal(op.cols)
        v = rng.standard_normal(op.rows)
        gap = abs(op.forward(u) @ v - u @ op.adjoint(v))
        worst = max(worst, gap / (np.linalg.norm(u) * np.linalg.norm(v)))
    return worst
