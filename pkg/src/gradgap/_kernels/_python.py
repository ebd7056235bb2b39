"""Pure-numpy kernel backend.

Same contract as the compiled extension: every function takes contiguous
float64 arrays (X of shape (n, d), y of shape (n,)) and returns fresh
float64 arrays. The models layer owns all argument validation.

Model conventions:
  linear_quadratic: loss = 0.5 * (theta.x - y)^2, P = d.
  mlp_tanh: f(x) = w2.tanh(W1 x + b1) + b2, loss = 0.5 * (f - y)^2,
    theta packed as [W1 row-major (h, d), b1 (h), w2 (h), b2], P = h*d + 2h + 1.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------- linear

def linear_losses(theta, X, y):
    r = X @ theta - y
    return 0.5 * r * r


def linear_grad_matrix(theta, X, y):
    r = X @ theta - y
    return r[:, None] * X


def linear_batch_grad(theta, X, y):
    r = X @ theta - y
    return (r @ X) / X.shape[0]


def linear_batch_hvp(theta, X, y, v):
    # Per-example Hessian is x x^T, independent of theta and y.
    return ((X @ v) @ X) / X.shape[0]


def linear_hvp_of_grads_mean(theta, X, y):
    # h_x g_x = |x|^2 (theta.x - y) x for each example.
    r = X @ theta - y
    sq = np.einsum("ni,ni->n", X, X)
    return ((r * sq) @ X) / X.shape[0]


# ---------------------------------------------------------------- mlp

def _mlp_unpack(theta, d, h):
    W1 = theta[: h * d].reshape(h, d)
    b1 = theta[h * d : h * d + h]
    w2 = theta[h * d + h : h * d + 2 * h]
    b2 = theta[h * d + 2 * h]
    return W1, b1, w2, b2


def _mlp_forward(theta, d, h, X):
    W1, b1, w2, b2 = _mlp_unpack(theta, d, h)
    A = np.tanh(X @ W1.T + b1)
    f = A @ w2 + b2
    return A, f, w2


def mlp_losses(theta, d, h, X, y):
    _, f, _ = _mlp_forward(theta, d, h, X)
    r = f - y
    return 0.5 * r * r


def mlp_grad_matrix(theta, d, h, X, y):
    A, f, w2 = _mlp_forward(theta, d, h, X)
    r = f - y
    U = (1.0 - A * A) * w2  # df/dz per hidden unit
    n = X.shape[0]
    out = np.empty((n, h * d + 2 * h + 1))
    out[:, : h * d] = (np.einsum("nh,nd->nhd", r[:, None] * U, X)).reshape(n, h * d)
    out[:, h * d : h * d + h] = r[:, None] * U
    out[:, h * d + h : h * d + 2 * h] = r[:, None] * A
    out[:, h * d + 2 * h] = r
    return out


def mlp_batch_grad(theta, d, h, X, y):
    A, f, w2 = _mlp_forward(theta, d, h, X)
    r = f - y
    U = (1.0 - A * A) * w2
    n = X.shape[0]
    out = np.empty(h * d + 2 * h + 1)
    RU = r[:, None] * U
    out[: h * d] = (RU.T @ X).reshape(h * d) / n
    out[h * d : h * d + h] = RU.sum(axis=0) / n
    out[h * d + h : h * d + 2 * h] = (r @ A) / n
    out[h * d + 2 * h] = r.sum() / n
    return out


def _mlp_hvp_terms(A, r, w2, X, dZ, vw2, vb2):
    """Shared forward-over-reverse assembly.

    Given the tangent dZ of hidden pre-activations (plus vw2, vb2), the
    Hessian-vector product of the squared loss is
    df * grad_f + r * d(grad_f), accumulated over the batch.
    """
    n = X.shape[0]
    h = A.shape[1]
    d = X.shape[1]
    one_m_a2 = 1.0 - A * A
    dA = one_m_a2 * dZ
    dF = A @ vw2 + dA @ w2 + vb2
    U = one_m_a2 * w2
    dU = vw2 * one_m_a2 - 2.0 * w2 * A * dA

    coefW = dF[:, None] * U + r[:, None] * dU  # rows scale x in the W1 block
    out = np.empty(h * d + 2 * h + 1)
    out[: h * d] = (coefW.T @ X).reshape(h * d) / n
    out[h * d : h * d + h] = coefW.sum(axis=0) / n
    out[h * d + h : h * d + 2 * h] = (dF @ A + r @ dA) / n
    out[h * d + 2 * h] = dF.sum() / n
    return out


def mlp_batch_hvp(theta, d, h, X, y, v):
    A, f, w2 = _mlp_forward(theta, d, h, X)
    r = f - y
    V1, vb1, vw2, vb2 = _mlp_unpack(v, d, h)
    dZ = X @ V1.T + vb1
    return _mlp_hvp_terms(A, r, w2, X, dZ, vw2, float(vb2))


def mlp_hvp_of_grads_mean(theta, d, h, X, y):
    """Mean over examples of (per-example Hessian) @ (per-example gradient).

    The direction v is each example's own gradient, so the tangent of
    the pre-activations collapses to r * U * (|x|^2 + 1) row-wise.
    """
    A, f, w2 = _mlp_forward(theta, d, h, X)
    r = f - y
    n = X.shape[0]
    one_m_a2 = 1.0 - A * A
    U = one_m_a2 * w2
    sq1 = np.einsum("ni,ni->n", X, X) + 1.0
    dZ = (r * sq1)[:, None] * U
    dA = one_m_a2 * dZ
    # Per-example v components: vw2 = r*a, vb2 = r.
    dF = np.einsum("nh,nh->n", A, r[:, None] * A) + dA @ w2 + r
    dU = (r[:, None] * A) * one_m_a2 - 2.0 * w2 * A * dA

    coefW = dF[:, None] * U + r[:, None] * dU
    out = np.empty(h * d + 2 * h + 1)
    out[: h * d] = (coefW.T @ X).reshape(h * d) / n
    out[h * d : h * d + h] = coefW.sum(axis=0) / n
    out[h * d + h : h * d + 2 * h] = (dF @ A + np.einsum("n,nh->h", r, dA)) / n
    out[h * d + 2 * h] = dF.sum() / n
    return out
