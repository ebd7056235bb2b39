"""Closed-form gradient statistics for the linear-Gaussian
teacher-student model: the analytic ground truth behind every ensemble
test.

With w = theta - teacher, residual r = w.x - s*xi on a fresh example, so
the per-example gradient is g = (w.x - s*xi) x. Gaussian moments give

    G = w,
    Sigma = (|w|^2 + s^2) I + w w^T,
    tr Sigma = (d+1)|w|^2 + d s^2,
    d(tr Sigma)/d(theta) = 2 (d+1) w.

The eigenvalues of Sigma are |w|^2 + s^2 (multiplicity d-1) and
2|w|^2 + s^2 along w, so the trace gradient is an L2-style pull of theta
toward the teacher. These expressions are validated against Monte Carlo
moment estimates in the test suite before any other test relies on them.
"""

from __future__ import annotations

import math

import numpy as np

from .core import GeneratorSpec, as_param_vector
from .gradstats import GradientStats

_MAX_ORACLE_DIM = 64  # dense covariance only; oracle use is small-d by design


def _mismatch(theta, gen: GeneratorSpec) -> np.ndarray:
    theta = as_param_vector(theta)
    if theta.size != gen.d:
        raise ValueError(f"theta length {theta.size} != generator d={gen.d}")
    if gen.d > _MAX_ORACLE_DIM:
        raise ValueError(f"oracle supports d <= {_MAX_ORACLE_DIM}")
    return theta - gen.teacher


def oracle_stats(theta, gen: GeneratorSpec) -> GradientStats:
    """Exact gradient mean and covariance at theta (sample_count = inf)."""
    w = _mismatch(theta, gen)
    s2 = gen.noise_std**2
    w2 = float(w @ w)
    cov = (w2 + s2) * np.eye(gen.d) + np.outer(w, w)
    return GradientStats(
        mean=w,
        trace=(gen.d + 1) * w2 + gen.d * s2,
        sample_count=math.inf,
        se_mean=np.zeros(gen.d),
        covariance=cov,
    )


def oracle_grad_trace(theta, gen: GeneratorSpec) -> np.ndarray:
    """Exact parameter-gradient of the covariance trace: 2 (d+1) w."""
    w = _mismatch(theta, gen)
    return 2.0 * (gen.d + 1) * w


def oracle_delta_gap(theta, gen: GeneratorSpec, eta: float, n: int) -> float:
    """Expected first-order change in the generalization gap after one
    update from a train set of size n: eta * tr Sigma / n."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    w = _mismatch(theta, gen)
    trace = (gen.d + 1) * float(w @ w) + gen.d * gen.noise_std**2
    return eta * trace / n
