"""GD/SGD steppers and the two algorithm variants under study: GD on an
explicitly regularized loss, and covariance-preconditioned SGD.

The regularized step adds the gradient of the modified loss
l + (1/4) <delta eps>, i.e. (eta / 4N) d(tr Sigma), so two such
full-batch steps reproduce the ensemble-mean displacement of two
half-batch SGD steps up to O(eta^3). The preconditioned step applies
the inverse of a rank-k-plus-ridge surrogate of the gradient covariance,
damping update components along strongly fluctuating directions.

Steppers are pure (theta in, theta out); a training run is a sequential
fold over steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models, oracle, rng
from .core import Batch, ExperimentConfig, GeneratorSpec
from .data import partition, sample_realization
from .gradstats import estimate_moments, grad_trace_cov, top_eigenpairs
from .models import ModelSpec

ALGORITHMS = ("gd", "sgd", "gd_regularized", "sgd_preconditioned")

# Preconditioner defaults; recorded in every trajectory's metadata.
PRECOND_EIGENPAIRS = 8
PRECOND_RIDGE_FACTOR = 0.1


def gd_step(model: ModelSpec, theta, train: Batch, eta: float) -> np.ndarray:
    """One full-batch descent step theta - eta * g_train."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    theta = np.asarray(theta, dtype=np.float64)
    return theta - eta * models.batch_grad(model, theta, train)


def sgd_epoch(model: ModelSpec, theta, batches, eta: float) -> np.ndarray:
    """Sequential minibatch steps, re-evaluating gradients at each point."""
    batches = list(batches)
    if not batches:
        raise ValueError("need at least one batch")
    theta = np.asarray(theta, dtype=np.float64)
    for b in batches:
        theta = gd_step(model, theta, b, eta)
    return theta


def regularized_gd_step(
    model: ModelSpec,
    theta,
    train: Batch,
    eta: float,
    n: int,
    trgrad_source: str = "estimator",
    gen: GeneratorSpec | None = None,
) -> np.ndarray:
    """Full-batch step on the loss plus a quarter of the expected gap
    change: theta - eta * [g_train + (eta / 4n) * d(tr Sigma)].

    The regularizer weight uses the step's own eta and the emulated
    full-batch size n by construction; that eta-dependence is the
    statement under test, not a tunable. The trace gradient comes from
    the closed form (`oracle`, linear model only) or from the
    split-sample estimator on the train batch (`estimator`).
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    theta = np.asarray(theta, dtype=np.float64)
    if trgrad_source == "oracle":
        if model.kind != models.LINEAR_QUADRATIC:
            raise ValueError("oracle trace gradient exists only for linear_quadratic")
        if gen is None:
            raise ValueError("oracle trace gradient needs the generator spec")
        trace_grad = oracle.oracle_grad_trace(theta, gen)
    elif trgrad_source == "estimator":
        trace_grad = grad_trace_cov(model, theta, train)
    else:
        raise ValueError(f"trgrad_source must be 'oracle' or 'estimator', not {trgrad_source!r}")
    g = models.batch_grad(model, theta, train)
    return theta - eta * (g + (eta / (4.0 * n)) * trace_grad)


def preconditioned_sgd_step(
    model: ModelSpec, theta, batch: Batch, eta: float, eigenpairs, lam: float
) -> np.ndarray:
    """SGD step through the inverse of a rank-k-plus-ridge covariance
    surrogate: components along eigenvector v_i are scaled by
    1/(sigma_i + lam), the orthogonal remainder by 1/lam."""
    if not lam > 0:
        raise ValueError("ridge lam must be positive")
    eigenpairs = list(eigenpairs)
    values = [float(s) for s, _ in eigenpairs]
    if any(values[i] < values[i + 1] for i in range(len(values) - 1)):
        raise ValueError("eigenpairs must be sorted descending")
    theta = np.asarray(theta, dtype=np.float64)
    g = models.batch_grad(model, theta, batch)
    if eigenpairs:
        vecs = np.stack([np.asarray(v, dtype=np.float64) for _, v in eigenpairs])
        gram = vecs @ vecs.T
        if np.max(np.abs(gram - np.eye(len(eigenpairs)))) > 1e-6:
            raise ValueError("eigenvectors must be orthonormal (Gram deviation > 1e-6)")
        coeffs = vecs @ g
        projected = coeffs @ vecs
        along = (coeffs / (np.array(values) + lam)) @ vecs
        u = along + (g - projected) / lam
    else:
        u = g / lam
    return theta - eta * u


@dataclass(frozen=True)
class TrajectoryStep:
    step: int
    train_loss: float
    test_loss: float
    gap: float
    trace_estimate: float
    theta: np.ndarray | None = None


@dataclass(frozen=True)
class Trajectory:
    algorithm: str
    steps: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        indices = [s.step for s in self.steps]
        if indices != list(range(len(indices))):
            raise ValueError("trajectory step indices must run 0..steps")

    def __len__(self) -> int:
        return len(self.steps)


def _trace_metric(model: ModelSpec, theta, train: Batch) -> float:
    """Monitoring estimate of tr Sigma: per-example gradient second
    moment minus squared mean over the full train batch."""
    grads = models.grad_matrix(model, theta, train)
    mean = grads.mean(axis=0)
    return float(np.einsum("ni,ni->", grads, grads) / len(train) - mean @ mean)


def run_training(config: ExperimentConfig, algorithm: str,
                 keep_params: bool = False) -> Trajectory:
    """Run one algorithm for config.steps updates on one realization,
    recording train/test loss, gap, and the trace estimate each step.

    Deterministic per (config, algorithm): the data realization, the
    minibatch schedule, and every stochastic choice derive from
    config.seed.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}, not {algorithm!r}")
    model = config.model
    eta = config.learning_rate
    real = sample_realization(
        config.generator,
        config.train_size,
        config.test_size,
        rng.fold_seed(config.seed, "training-realization"),
    )
    train, test = real.train, real.test
    uses_minibatches = algorithm in ("sgd", "sgd_preconditioned")
    per_epoch = config.train_size // config.batch_size
    if uses_minibatches and algorithm == "sgd_preconditioned" and config.batch_size < 2:
        raise ValueError("sgd_preconditioned needs batch_size >= 2 to estimate moments")

    theta = config.initial_params()
    metadata = {
        "algorithm": algorithm,
        "eta": eta,
        "train_size": config.train_size,
        "test_size": config.test_size,
        "batch_size": config.batch_size if uses_minibatches else config.train_size,
        "seed": config.seed,
        "model": model.kind,
    }
    if algorithm == "sgd_preconditioned":
        metadata["precond_eigenpairs"] = PRECOND_EIGENPAIRS
        metadata["precond_ridge_factor"] = PRECOND_RIDGE_FACTOR
    if algorithm == "gd_regularized":
        source = "oracle" if model.kind == models.LINEAR_QUADRATIC else "estimator"
        metadata["trgrad_source"] = source

    def record(step_idx: int) -> TrajectoryStep:
        train_loss = models.batch_loss(model, theta, train)
        test_loss = models.batch_loss(model, theta, test)
        return TrajectoryStep(
            step=step_idx,
            train_loss=train_loss,
            test_loss=test_loss,
            gap=test_loss - train_loss,
            trace_estimate=_trace_metric(model, theta, train),
            theta=np.array(theta) if keep_params else None,
        )

    steps = [record(0)]
    epoch_batches: list[Batch] = []
    for t in range(config.steps):
        if uses_minibatches:
            epoch, slot = divmod(t, per_epoch)
            if slot == 0:
                epoch_batches = partition(
                    train, per_epoch, rng.fold_seed(config.seed, epoch, "epoch-shuffle")
                )
            minibatch = epoch_batches[slot]
        if algorithm == "gd":
            theta = gd_step(model, theta, train, eta)
        elif algorithm == "sgd":
            theta = gd_step(model, theta, minibatch, eta)
        elif algorithm == "gd_regularized":
            theta = regularized_gd_step(
                model, theta, train, eta, config.train_size,
                trgrad_source=metadata["trgrad_source"], gen=config.generator,
            )
        else:  # sgd_preconditioned
            stats = estimate_moments(model, theta, minibatch)
            k = min(PRECOND_EIGENPAIRS, model.param_count)
            source = stats if stats.covariance is not None else None
            if source is None:
                from .gradstats import CovarianceOperator

                source = CovarianceOperator(model, theta, minibatch)
            pairs = top_eigenpairs(source, k)
            sigma1 = pairs[0][0]
            lam = PRECOND_RIDGE_FACTOR * sigma1 if sigma1 > 0 else 1.0
            theta = preconditioned_sgd_step(model, theta, minibatch, eta, pairs, lam)
        steps.append(record(t + 1))
    return Trajectory(algorithm=algorithm, steps=tuple(steps), metadata=metadata)
