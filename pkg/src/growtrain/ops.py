"""Dense float64 tensor primitives with hand-written adjoints.

Tensors are plain ``numpy.ndarray`` objects with dtype float64.  Every
differentiable operation here ships an explicit backward function; there is
no autograd tape.  The finite-difference checker at the bottom is the test
oracle the adjoints are validated against.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ParamError, ShapeError
from .rng import Rng

GELU_COEF = 0.044715
SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with an explicit shape check."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b


def matmul_backward(g: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Adjoint of matmul: returns (d/da, d/db) given upstream gradient g."""
    return g @ b.T, a.T @ g


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Adjoint of softmax_rows given its output y."""
    return y * (g - np.sum(g * y, axis=1, keepdims=True))


def gelu(x: np.ndarray) -> np.ndarray:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi)(x + 0.044715 x^3)))."""
    inner = SQRT_2_OVER_PI * (x + GELU_COEF * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = SQRT_2_OVER_PI * (x + GELU_COEF * x**3)
    t = np.tanh(inner)
    d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x**2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-12) -> np.ndarray:
    """Per-row normalization (population variance) followed by affine."""
    if eps <= 0:
        raise ParamError(f"layer_norm: eps must be > 0, got {eps}")
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return xhat * gain + bias


def layer_norm_backward(g: np.ndarray, x: np.ndarray, gain: np.ndarray,
                        eps: float = 1e-12):
    """Adjoint of layer_norm; returns (dx, dgain, dbias)."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    s = np.sqrt(var + eps)
    xhat = (x - mu) / s
    gg = g * gain
    dgain = np.sum(g * xhat, axis=0)
    dbias = np.sum(g, axis=0)
    dx = (gg - gg.mean(axis=1, keepdims=True)
          - xhat * np.mean(gg * xhat, axis=1, keepdims=True)) / s
    return dx, dgain, dbias


def mean_pool_rows(x: np.ndarray, k: int) -> np.ndarray:
    """Average consecutive groups of k rows; a short final group of r rows
    (r = m mod k) is averaged over r."""
    if k < 1:
        raise ParamError(f"mean_pool_rows: k must be >= 1, got {k}")
    if k == 1:
        return x.copy()
    m = x.shape[0]
    return np.stack([x[i:i + k].mean(axis=0) for i in range(0, m, k)])


def dropout_mask(shape, p: float, rng: Rng, training: bool):
    """Multiplicative dropout mask (0 or 1/(1-p)), or None when inactive."""
    if not 0.0 <= p < 1.0:
        raise ParamError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return None
    keep = rng.uniform(size=shape) >= p
    return keep.astype(np.float64) / (1.0 - p)


def dropout(x: np.ndarray, p: float, rng: Rng, training: bool) -> np.ndarray:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    mask = dropout_mask(x.shape, p, rng, training)
    return x if mask is None else x * mask


def cross_entropy_logits(logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    """Mean negative log softmax at the target indices.

    Returns (loss, analytic gradient w.r.t. logits).
    """
    targets = np.asarray(targets, dtype=np.int64)
    m, v = logits.shape
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= v:
        raise IndexError(f"cross_entropy_logits: target out of range [0, {v})")
    p = softmax_rows(logits)
    rows = np.arange(m)
    loss = float(-np.log(p[rows, targets]).mean())
    grad = p.copy()
    grad[rows, targets] -= 1.0
    grad /= m
    return loss, grad


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of x."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = f(x)
        xf[i] = orig - h
        fm = f(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return grad


def finite_diff_check(f: Callable[[np.ndarray], float], x: np.ndarray,
                      analytic_grad: np.ndarray, h: float = 1e-5) -> float:
    """Max over elements of |fd - analytic| / max(1, |fd|, |analytic|)."""
    if h <= 0:
        raise ParamError(f"finite_diff_check: h must be > 0, got {h}")
    fd = finite_diff_grad(f, x.copy(), h)
    denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(analytic_grad)))
    return float(np.max(np.abs(fd - analytic_grad) / denom))
