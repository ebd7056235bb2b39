"""Leading-order update identities in both exact (direct evaluation) and
first-order (formula) modes, with Monte Carlo ensemble averaging.

Sign convention for the two-update gradient shift dg: it is defined by

    (two full-batch GD steps) - (half-batch SGD two-step) = -eta * dg,

so the ensemble mean of dg equals -(eta / 2N) * d(tr Sigma)/d(theta),
i.e. minus half the parameter-gradient of the expected gap change. The
convention is pinned by the exactness check on the quadratic model: a
flipped sign would silently pass symmetric tests, so it is asserted
there, not here.

Ensemble evaluation is a pure function of (config, quantity, m):
members are keyed by realization index, results are reduced in index
order, and the optional thread pool changes speed only.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import models, oracle, rng
from .core import Batch, ExperimentConfig, concat_batches
from .data import partition, sample_realization
from .gradstats import GradientStats, TheoryReport, _z_scores
from .models import ModelSpec

ENSEMBLE_QUANTITIES = (
    "delta_gap",
    "gradient_shift",
    "train_test_divergence",
    "sgd_vs_modified_gd",
)


# ------------------------------------------------------------ single-update

def delta_loss_first_order(g_a, g_b, eta: float) -> float:
    """First-order loss change -eta * g_a . g_b for an update along -g_b."""
    g_a = np.asarray(g_a, dtype=np.float64)
    g_b = np.asarray(g_b, dtype=np.float64)
    if g_a.shape != g_b.shape:
        raise ValueError("gradient vectors must have equal length")
    if not eta > 0:
        raise ValueError("eta must be positive")
    return float(-eta * (g_a @ g_b))


def delta_loss_exact(model: ModelSpec, theta, a: Batch, b: Batch, eta: float) -> float:
    """Exact change of the batch-a loss after one update computed on b."""
    theta = np.asarray(theta, dtype=np.float64)
    stepped = theta - eta * models.batch_grad(model, theta, b)
    return models.batch_loss(model, stepped, a) - models.batch_loss(model, theta, a)


def predicted_avg_delta_loss(stats: GradientStats, overlap_f: float, eta: float) -> float:
    """Expected first-order loss change: -eta (|G|^2 + overlap * tr Sigma).

    Both bracket terms are nonnegative, so this is always <= 0: the loss
    estimator decreases at first order, with an enhancement when the
    loss and gradient estimators share examples.
    """
    g2 = float(stats.mean @ stats.mean)
    return -eta * (g2 + overlap_f * stats.trace)


def delta_gap(model: ModelSpec, theta, train: Batch, test: Batch, eta: float,
              mode: str = "exact") -> float:
    """Change in the generalization gap (test minus train loss change)
    after one update on the train batch.

    first_order mode evaluates eta * g_train . (g_train - g_test); the
    derivation assumes disjoint train/test, so overlapping ids are an
    error.
    """
    if train.id_set & test.id_set:
        raise ValueError("train and test batches must not overlap")
    if mode == "exact":
        return delta_loss_exact(model, theta, test, train, eta) - delta_loss_exact(
            model, theta, train, train, eta
        )
    if mode == "first_order":
        g_tr = models.batch_grad(model, theta, train)
        g_te = models.batch_grad(model, theta, test)
        return float(eta * (g_tr @ (g_tr - g_te)))
    raise ValueError(f"mode must be 'exact' or 'first_order', not {mode!r}")


def predicted_avg_delta_gap(trace: float, eta: float, n: int) -> float:
    """Expected gap change eta * tr Sigma / n (nonnegative, 1/n scaling)."""
    if trace < 0:
        raise ValueError("trace must be >= 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    return eta * trace / n


# ------------------------------------------------------------- two updates

def two_step_exact(model: ModelSpec, theta, b: Batch, c: Batch, eta: float) -> np.ndarray:
    """Parameter displacement after an update on b then an update on c."""
    theta = np.asarray(theta, dtype=np.float64)
    theta1 = theta - eta * models.batch_grad(model, theta, b)
    theta2 = theta1 - eta * models.batch_grad(model, theta1, c)
    return theta2 - theta


def two_step_taylor(model: ModelSpec, theta, b: Batch, c: Batch, eta: float) -> np.ndarray:
    """Second-order expansion of the two-step displacement, all terms at
    the starting point: -eta (g_b + g_c) + eta^2 h_c g_b.

    Exact for quadratic losses; the remainder is O(eta^3) otherwise.
    """
    g_b = models.batch_grad(model, theta, b)
    g_c = models.batch_grad(model, theta, c)
    correction = models.batch_hvp(model, theta, c, g_b)
    return -eta * (g_b + g_c) + eta * eta * correction


def _check_shift_batches(batches) -> None:
    sizes = {len(b) for b in batches}
    if len(sizes) != 1:
        raise ValueError("batches must have equal sizes")
    seen: set = set()
    for b in batches:
        ids = b.id_set
        if seen & ids:
            raise ValueError("batches must be pairwise disjoint")
        seen |= ids


def gradient_shift(model: ModelSpec, theta, b: Batch, c: Batch, eta: float,
                   mode: str = "definition") -> np.ndarray:
    """Effective gradient difference dg between full-batch GD and
    half-batch SGD over two updates.

    definition mode evaluates (GD two-step minus SGD two-step) / (-eta)
    with exact dynamics. closed_form mode evaluates the first-order
    expression
        -(eta/8) [ grad|g_b - g_c|^2 + 4 (h_b g_c - h_c g_b) ],
    with grad|.|^2 expanded through batch HVPs as
    2 (h_b - h_c)(g_b - g_c) (algebraically identical, noise-free).
    The two modes coincide exactly on quadratic losses and differ at
    O(eta^2) otherwise.
    """
    _check_shift_batches((b, c))
    if mode == "definition":
        return epoch_gradient_shift(model, theta, [b, c], eta)
    if mode == "closed_form":
        g_b = models.batch_grad(model, theta, b)
        g_c = models.batch_grad(model, theta, c)
        diff = g_b - g_c
        grad_sq = 2.0 * (models.batch_hvp(model, theta, b, diff)
                         - models.batch_hvp(model, theta, c, diff))
        cross = models.batch_hvp(model, theta, b, g_c) - models.batch_hvp(model, theta, c, g_b)
        return -(eta / 8.0) * (grad_sq + 4.0 * cross)
    raise ValueError(f"mode must be 'definition' or 'closed_form', not {mode!r}")


def epoch_gradient_shift(model: ModelSpec, theta, batches, eta: float) -> np.ndarray:
    """Definition-mode gradient shift for an epoch of k >= 2 updates:
    (k GD steps on the union minus sequential SGD over the batches)
    divided by -eta * k/2.

    The k/2 normalization reduces to the two-update definition at k = 2;
    the proportionality coefficient for k > 2 is measured, not asserted.
    """
    batches = list(batches)
    if len(batches) < 2:
        raise ValueError("need at least 2 batches")
    _check_shift_batches(batches)
    theta = np.asarray(theta, dtype=np.float64)
    union = concat_batches(batches)
    k = len(batches)

    theta_gd = theta
    for _ in range(k):
        theta_gd = theta_gd - eta * models.batch_grad(model, theta_gd, union)
    theta_sgd = theta
    for b in batches:
        theta_sgd = theta_sgd - eta * models.batch_grad(model, theta_sgd, b)

    return ((theta_gd - theta) - (theta_sgd - theta)) / (-eta * k / 2.0)


# -------------------------------------------------------------- order fits

def order_exponent(values) -> float:
    """Least-squares slope of log(residual) against log(eta).

    Verifies the order of a remainder term: residuals c * eta^p fit to
    slope p for any c > 0.
    """
    pts = [(float(e), float(r)) for e, r in values]
    if len(pts) < 3:
        raise ValueError("need at least 3 (eta, residual) points")
    etas = np.array([e for e, _ in pts])
    residuals = np.array([r for _, r in pts])
    if np.unique(etas).size != etas.size or np.any(etas <= 0):
        raise ValueError("etas must be distinct and positive")
    if np.any(residuals <= 0):
        raise ValueError("residuals must be positive (take norms first)")
    slope, _ = np.polyfit(np.log(etas), np.log(residuals), 1)
    return float(slope)


# ---------------------------------------------------------------- ensembles

def _realization(config: ExperimentConfig, index: int):
    seed = rng.fold_seed(config.seed, index, "realization")
    return sample_realization(config.generator, config.train_size, config.test_size, seed)


def _halves(config: ExperimentConfig, index: int, train: Batch):
    return partition(train, 2, rng.fold_seed(config.seed, index, "halves"))


def _member_delta_gap(config, theta0, index):
    real = _realization(config, index)
    value = delta_gap(
        config.model, theta0, real.train, real.test, config.learning_rate, "first_order"
    )
    return np.array([value])


def _member_gradient_shift(config, theta0, index):
    real = _realization(config, index)
    b, c = _halves(config, index, real.train)
    return gradient_shift(config.model, theta0, b, c, config.learning_rate, "definition")


def _member_train_test_divergence(config, theta0, index):
    from .gradstats import train_test_divergence

    real = _realization(config, index)
    return np.array(
        [train_test_divergence(config.model, theta0, real.train, real.test)]
    )


def _member_sgd_vs_modified_gd(config, theta0, index):
    from .optim import regularized_gd_step

    real = _realization(config, index)
    b, c = _halves(config, index, real.train)
    eta = config.learning_rate
    sgd_disp = two_step_exact(config.model, theta0, b, c, eta)
    theta1 = regularized_gd_step(
        config.model, theta0, real.train, eta, config.train_size,
        trgrad_source="oracle", gen=config.generator,
    )
    theta2 = regularized_gd_step(
        config.model, theta1, real.train, eta, config.train_size,
        trgrad_source="oracle", gen=config.generator,
    )
    return sgd_disp - (theta2 - theta0)


_MEMBERS = {
    "delta_gap": _member_delta_gap,
    "gradient_shift": _member_gradient_shift,
    "train_test_divergence": _member_train_test_divergence,
    "sgd_vs_modified_gd": _member_sgd_vs_modified_gd,
}


def _predicted(config: ExperimentConfig, theta0, quantity: str) -> np.ndarray:
    gen = config.generator
    eta = config.learning_rate
    n = config.train_size
    if quantity == "delta_gap":
        return np.array([oracle.oracle_delta_gap(theta0, gen, eta, n)])
    if quantity == "gradient_shift":
        return -(eta / (2.0 * n)) * oracle.oracle_grad_trace(theta0, gen)
    if quantity == "train_test_divergence":
        return np.array([-oracle.oracle_stats(theta0, gen).trace / n])
    if quantity == "sgd_vs_modified_gd":
        return np.zeros(config.model.param_count)
    raise ValueError(f"unknown ensemble quantity {quantity!r}")


def ensemble_members(config: ExperimentConfig, quantity: str, m: int,
                     threads: int = 1) -> np.ndarray:
    """Per-realization values of an ensemble quantity, one row per member.

    Member index keys the random streams, so the result is independent
    of `threads` and of evaluation order.
    """
    if quantity not in _MEMBERS:
        raise ValueError(
            f"quantity must be one of {ENSEMBLE_QUANTITIES}, not {quantity!r}"
        )
    if m < 2:
        raise ValueError("ensemble size m must be >= 2")
    if config.model.kind != models.LINEAR_QUADRATIC:
        raise ValueError(
            "ensemble predictions use the linear-Gaussian closed forms; "
            "model kind must be linear_quadratic"
        )
    member = _MEMBERS[quantity]
    theta0 = config.initial_params()
    first = member(config, theta0, 0)
    out = np.empty((m, first.size))
    out[0] = first

    if threads <= 1:
        for i in range(1, m):
            out[i] = member(config, theta0, i)
    else:
        def fill(chunk):
            for i in chunk:
                out[i] = member(config, theta0, i)

        indices = range(1, m)
        chunk_size = max(1, (m - 1) // (threads * 8) + 1)
        chunks = [indices[j : j + chunk_size] for j in range(0, len(indices), chunk_size)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, chunks))
    return out


def ensemble_report(config: ExperimentConfig, quantity: str, m: int,
                    threads: int = 1) -> TheoryReport:
    """Ensemble mean and standard error of `quantity` over m fresh
    realizations, against the linear-Gaussian oracle prediction.

    Predictions: eta tr Sigma / N for delta_gap; -(eta/2N) d(tr Sigma)
    for gradient_shift; -tr Sigma / N for train_test_divergence; the
    zero vector for sgd_vs_modified_gd (the SGD-vs-regularized-GD
    two-step difference is O(eta^3)).
    """
    values = ensemble_members(config, quantity, m, threads=threads)
    theta0 = config.initial_params()
    measured = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / math.sqrt(m)
    predicted = _predicted(config, theta0, quantity)
    return TheoryReport(
        name=quantity,
        measured=measured,
        se=se,
        predicted=predicted,
        z=_z_scores(measured, predicted, se),
        metadata={
            "eta": config.learning_rate,
            "n": config.train_size,
            "n_test": config.test_size,
            "m": m,
            "seed": config.seed,
            "model": config.model.kind,
            "generator_d": config.generator.d,
            "noise_std": config.generator.noise_std,
            "theta0": [float(v) for v in theta0],
            "sample_count": m,
        },
    )
