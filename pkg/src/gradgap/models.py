"""Differentiable model surfaces: per-example loss, gradient, and exact
Hessian-vector products.

Two model kinds are supported. `linear_quadratic` is a linear predictor
with squared loss (the case with closed-form gradient statistics).
`mlp_tanh` is a one-hidden-layer tanh network with scalar output and
squared loss: the smallest nonlinear model whose Hessian depends on the
parameters. Its HVP is computed analytically by a forward-over-reverse
sweep; finite differences appear only in the test suite, because the
update-expansion experiments need HVP noise far below the residuals
they measure.

All operations are pure functions of their arguments and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from . import rng
from .core import Batch, Example, as_param_vector

LINEAR_QUADRATIC = "linear_quadratic"
MLP_TANH = "mlp_tanh"


@dataclass(frozen=True)
class ModelSpec:
    """Model family plus the dimensions that fix its parameter count."""

    kind: str
    d: int
    hidden: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (LINEAR_QUADRATIC, MLP_TANH):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("input dimension d must be >= 1")
        if self.kind == MLP_TANH:
            if self.hidden is None or self.hidden < 1:
                raise ValueError("mlp_tanh requires hidden width >= 1")
            object.__setattr__(self, "hidden", int(self.hidden))
        elif self.hidden is not None:
            raise ValueError("hidden width only applies to mlp_tanh")

    @property
    def param_count(self) -> int:
        if self.kind == LINEAR_QUADRATIC:
            return self.d
        return self.hidden * self.d + 2 * self.hidden + 1

    def init_params(self) -> np.ndarray:
        """Seeded initialization: zero biases, Gaussian weights with
        variance 1/fan_in."""
        if self.kind == LINEAR_QUADRATIC:
            return np.zeros(self.d)
        gen = rng.stream(self.seed, "model-init")
        h, d = self.hidden, self.d
        theta = np.zeros(self.param_count)
        theta[: h * d] = gen.normal(0.0, 1.0 / np.sqrt(d), size=h * d)
        theta[h * d + h : h * d + 2 * h] = gen.normal(0.0, 1.0 / np.sqrt(h), size=h)
        return theta


def _check_theta(model: ModelSpec, theta, name="theta") -> np.ndarray:
    arr = as_param_vector(theta, name)
    if arr.size != model.param_count:
        raise ValueError(
            f"{name} length {arr.size} does not match model parameter count "
            f"{model.param_count}"
        )
    return arr


def _check_batch(model: ModelSpec, batch: Batch) -> Batch:
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    if batch.dim != model.d:
        raise ValueError(f"batch input dimension {batch.dim} != model d={model.d}")
    return batch


def _row(model: ModelSpec, x: Example):
    inp = np.ascontiguousarray(x.input, dtype=np.float64)
    if inp.size != model.d:
        raise ValueError(f"example input dimension {inp.size} != model d={model.d}")
    return inp.reshape(1, model.d), np.array([x.target])


# -------------------------------------------------------- per-example ops

def loss(model: ModelSpec, theta, x: Example) -> float:
    """Squared-error loss of the model on one example."""
    theta = _check_theta(model, theta)
    X, y = _row(model, x)
    if model.kind == LINEAR_QUADRATIC:
        return float(kernels.linear_losses(theta, X, y)[0])
    return float(kernels.mlp_losses(theta, model.d, model.hidden, X, y)[0])


def grad(model: ModelSpec, theta, x: Example) -> np.ndarray:
    """Exact gradient of `loss` with respect to the parameters."""
    theta = _check_theta(model, theta)
    X, y = _row(model, x)
    if model.kind == LINEAR_QUADRATIC:
        return kernels.linear_grad_matrix(theta, X, y)[0]
    return kernels.mlp_grad_matrix(theta, model.d, model.hidden, X, y)[0]


def hvp(model: ModelSpec, theta, x: Example, v) -> np.ndarray:
    """Exact per-example Hessian applied to v (never finite differences)."""
    theta = _check_theta(model, theta)
    v = _check_theta(model, v, "v")
    X, y = _row(model, x)
    if model.kind == LINEAR_QUADRATIC:
        return kernels.linear_batch_hvp(theta, X, y, v)
    return kernels.mlp_batch_hvp(theta, model.d, model.hidden, X, y, v)


# -------------------------------------------------------- batch-level ops

def batch_loss(model: ModelSpec, theta, batch: Batch) -> float:
    """Arithmetic mean of per-example losses, in batch order."""
    theta = _check_theta(model, theta)
    batch = _check_batch(model, batch)
    if model.kind == LINEAR_QUADRATIC:
        losses = kernels.linear_losses(theta, batch.inputs, batch.targets)
    else:
        losses = kernels.mlp_losses(theta, model.d, model.hidden, batch.inputs, batch.targets)
    return float(losses.sum() / len(batch))


def batch_grad(model: ModelSpec, theta, batch: Batch) -> np.ndarray:
    """Mean per-example gradient; equals the gradient of `batch_loss`."""
    theta = _check_theta(model, theta)
    batch = _check_batch(model, batch)
    if model.kind == LINEAR_QUADRATIC:
        return kernels.linear_batch_grad(theta, batch.inputs, batch.targets)
    return kernels.mlp_batch_grad(theta, model.d, model.hidden, batch.inputs, batch.targets)


def batch_hvp(model: ModelSpec, theta, batch: Batch, v) -> np.ndarray:
    """Mean per-example Hessian applied to v (the batch Hessian estimator)."""
    theta = _check_theta(model, theta)
    v = _check_theta(model, v, "v")
    batch = _check_batch(model, batch)
    if model.kind == LINEAR_QUADRATIC:
        return kernels.linear_batch_hvp(theta, batch.inputs, batch.targets, v)
    return kernels.mlp_batch_hvp(theta, model.d, model.hidden, batch.inputs, batch.targets, v)


def grad_matrix(model: ModelSpec, theta, batch: Batch) -> np.ndarray:
    """Per-example gradients stacked into an (n, P) matrix."""
    theta = _check_theta(model, theta)
    batch = _check_batch(model, batch)
    if model.kind == LINEAR_QUADRATIC:
        return kernels.linear_grad_matrix(theta, batch.inputs, batch.targets)
    return kernels.mlp_grad_matrix(theta, model.d, model.hidden, batch.inputs, batch.targets)


def hvp_of_grads_mean(model: ModelSpec, theta, batch: Batch) -> np.ndarray:
    """Mean over examples of hvp(x, grad(x)).

    This is the estimator of the expectation E[h g], which enters the
    gradient of the covariance trace; fused so each example's gradient
    is not materialized twice.
    """
    theta = _check_theta(model, theta)
    batch = _check_batch(model, batch)
    if model.kind == LINEAR_QUADRATIC:
        return kernels.linear_hvp_of_grads_mean(theta, batch.inputs, batch.targets)
    return kernels.mlp_hvp_of_grads_mean(
        theta, model.d, model.hidden, batch.inputs, batch.targets
    )
