"""Kernel backend selection.

The hot per-example loops (losses, gradients, Hessian-vector products)
have two interchangeable implementations: a Cython extension compiled at
install time and a pure-numpy fallback. The compiled one is picked at
import when available; set GRADGAP_BACKEND=python|compiled to force a
choice (forcing `compiled` raises if the extension is missing).

Both backends implement the same contract and agree to floating-point
roundoff; see benchmarks/bench_kernels.py for the speed comparison.
"""

from __future__ import annotations

import os

from . import _python

_choice = os.environ.get("GRADGAP_BACKEND", "auto").lower()
if _choice not in ("auto", "compiled", "python"):
    raise RuntimeError(f"GRADGAP_BACKEND must be auto, compiled or python, not {_choice!r}")

if _choice == "python":
    _impl = _python
    BACKEND = "python"
else:
    try:
        from . import _compiled as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _python
        BACKEND = "python"


def backend_name() -> str:
    """Name of the kernel backend active in this process."""
    return BACKEND


linear_losses = _impl.linear_losses
linear_grad_matrix = _impl.linear_grad_matrix
linear_batch_grad = _impl.linear_batch_grad
linear_batch_hvp = _impl.linear_batch_hvp
linear_hvp_of_grads_mean = _impl.linear_hvp_of_grads_mean
mlp_losses = _impl.mlp_losses
mlp_grad_matrix = _impl.mlp_grad_matrix
mlp_batch_grad = _impl.mlp_batch_grad
mlp_batch_hvp = _impl.mlp_batch_hvp
mlp_hvp_of_grads_mean = _impl.mlp_hvp_of_grads_mean
