"""Per-example gradient statistics for small differentiable models, and
empirical verification of the leading-order identities tying SGD/GD
updates to the generalization gap.

The hot kernels (per-example losses, gradients, Hessian-vector products)
run on a compiled extension when built, with a pure-numpy fallback
selected at import; `kernel_backend()` reports which one is active.
"""

from ._kernels import backend_name as kernel_backend
from .core import (
    Batch,
    DataRealization,
    Example,
    ExperimentConfig,
    GeneratorSpec,
    ParamVector,
    concat_batches,
    overlap_factor,
)
from .data import DatasetParseError, load_dataset, partition, sample_realization
from .gradstats import (
    ConvergenceError,
    CovarianceOperator,
    GradientStats,
    TheoryReport,
    estimate_moments,
    grad_trace_cov,
    joint_covariance_check,
    near_degenerate_flags,
    top_eigenpairs,
    train_test_divergence,
)
from .models import LINEAR_QUADRATIC, MLP_TANH, ModelSpec
from .oracle import oracle_delta_gap, oracle_grad_trace, oracle_stats
from .optim import (
    Trajectory,
    TrajectoryStep,
    gd_step,
    preconditioned_sgd_step,
    regularized_gd_step,
    run_training,
    sgd_epoch,
)
from .theory import (
    delta_gap,
    delta_loss_exact,
    delta_loss_first_order,
    ensemble_report,
    epoch_gradient_shift,
    gradient_shift,
    order_exponent,
    predicted_avg_delta_gap,
    predicted_avg_delta_loss,
    two_step_exact,
    two_step_taylor,
)

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ConvergenceError",
    "CovarianceOperator",
    "DataRealization",
    "DatasetParseError",
    "Example",
    "ExperimentConfig",
    "GeneratorSpec",
    "GradientStats",
    "LINEAR_QUADRATIC",
    "MLP_TANH",
    "ModelSpec",
    "ParamVector",
    "TheoryReport",
    "Trajectory",
    "TrajectoryStep",
    "concat_batches",
    "delta_gap",
    "delta_loss_exact",
    "delta_loss_first_order",
    "ensemble_report",
    "epoch_gradient_shift",
    "estimate_moments",
    "gd_step",
    "grad_trace_cov",
    "gradient_shift",
    "joint_covariance_check",
    "kernel_backend",
    "load_dataset",
    "near_degenerate_flags",
    "oracle_delta_gap",
    "oracle_grad_trace",
    "oracle_stats",
    "order_exponent",
    "overlap_factor",
    "partition",
    "preconditioned_sgd_step",
    "predicted_avg_delta_gap",
    "predicted_avg_delta_loss",
    "regularized_gd_step",
    "run_training",
    "sample_realization",
    "sgd_epoch",
    "top_eigenpairs",
    "train_test_divergence",
    "two_step_exact",
    "two_step_taylor",
]
