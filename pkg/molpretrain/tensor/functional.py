"""Differentiable kernels.

Each kernel computes its forward value with numpy and returns a tensor
recorded with the exact local gradient rule.
"""

from __future__ import annotations

from typing import Any, Sequence

import math

import numpy as np
from scipy import special

from molpretrain.errors import ConfigError, ShapeError, SkipBatch
from molpretrain.tensor.tensor import Tensor, as_tensor, record

IGNORE_INDEX = -100
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), backward, "add")


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), backward, "sub")


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * factor,)

    return record(a.data * np.asarray(factor, dtype=a.dtype), (a,), backward, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching rules (``a`` may carry batch axes)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(a.shape),)

    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return record(out, (a,), backward, "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.transpose(g, inverse),)

    return record(np.transpose(a.data, axes), (a,), backward, "transpose")


def index(a: Tensor, key: Any) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate in the gradient."""

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(a.data)
        np.add.at(grad, key, g)
        return (grad,)

    return record(a.data[key], (a,), backward, "index")


def sum(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum(a, axis, keepdims), 1.0 / count)


def softmax(x: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``.

    ``mask`` (broadcastable to ``x``, True = keep) sets excluded positions to
    minus infinity before normalising, so they receive exactly zero weight. A
    fully masked row yields all zeros.
    """
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    zmax = np.max(z, axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.exp(z - zmax)
    denom = e.sum(axis=axis, keepdims=True)
    y = (e / np.where(denom > 0, denom, 1.0)).astype(x.dtype, copy=False)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (x,), backward, "softmax")


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis with population variance, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: gamma/beta {gamma.shape} do not match {x.shape}")
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = (inv / n) * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return record(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``0.5 x (1 + erf(x / sqrt 2))``."""
    cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data**2)
        return (g * (cdf + x.data * pdf),)

    return record((x.data * cdf).astype(x.dtype, copy=False), (x,), backward, "gelu")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by ``1 / (1 - p)``; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * np.asarray(1.0 / (1.0 - p), dtype=x.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * keep,)

    return record(x.data * keep, (x,), backward, "dropout")


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(f"embedding ids outside [0, {weight.shape[0]})")

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(weight.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return record(weight.data[ids], (weight,), backward, "embedding")


def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    ignore_index: int = IGNORE_INDEX,
    weight: np.ndarray | None = None,
) -> Tensor:
    """Weighted mean cross-entropy of ``[N, C]`` logits against integer targets.

    Rows whose target is ``ignore_index`` do not contribute. With class
    weights the mean is ``sum(w_t * loss) / sum(w_t)``.

    Raises
    ------
    SkipBatch
        If every target is ignored
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N, C] logits, got {logits.shape}")
    targets = np.asarray(targets).reshape(-1)
    if targets.shape[0] != logits.shape[0]:
        raise ShapeError(f"{logits.shape[0]} logit rows but {targets.shape[0]} targets")
    valid = targets != ignore_index
    if not valid.any():
        raise SkipBatch("no target positions in batch")
    n_classes = logits.shape[1]
    safe = np.where(valid, targets, 0)
    if safe.min() < 0 or safe.max() >= n_classes:
        raise ShapeError("cross_entropy target outside the class range")
    class_weight = np.ones(n_classes) if weight is None else np.asarray(weight, dtype=np.float64)
    w = np.where(valid, class_weight[safe], 0.0).astype(logits.dtype)
    denom = w.sum()
    logp = log_softmax(logits.data)
    picked = logp[np.arange(len(safe)), safe]
    loss = np.asarray(-(w * picked).sum() / denom, dtype=logits.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.exp(logp)
        grad[np.arange(len(safe)), safe] -= 1.0
        return (grad * (w / denom)[:, None] * g,)

    return record(loss, (logits,), backward, "cross_entropy")


def mse(pred: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error over the batch and the unmasked columns.

    ``mask`` is a per-column 0/1 vector; masked columns are left out of both
    the sum and the count.
    """
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    m = np.ones(pred.shape[-1], dtype=pred.dtype) if mask is None else np.asarray(mask, dtype=pred.dtype)
    if m.shape != (pred.shape[-1],):
        raise ShapeError(f"mse mask must have shape ({pred.shape[-1]},), got {m.shape}")
    rows = pred.size // pred.shape[-1]
    count = rows * m.sum()
    if count == 0:
        raise SkipBatch("every regression task is masked")
    diff = (pred.data - target) * m
    loss = np.asarray((diff**2).sum() / count, dtype=pred.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (2.0 * diff / count * g,)

    return record(loss, (pred,), backward, "mse")
