"""Differentiable operations over :class:`Tensor`.

Each op computes its forward result with numpy and hands a closure for the
vector-Jacobian product to :func:`record`.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, record

PROB_FLOOR = 1e-12


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return record("mul", a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return record("matmul", a.data @ b.data, (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return record("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record("relu", np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,),
                  lambda g: (g * mask,))


def mean(a: Tensor, axis: int) -> Tensor:
    """Mean over one axis; used for global average pooling."""
    n = a.shape[axis]

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape) / a.dtype.type(n),)
    return record("mean", a.data.mean(axis=axis), (a,), bw)


def _wrap(a) -> Tensor:
    return a if isinstance(a, Tensor) else Tensor(a)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _wrap(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return record("softmax", y, (a,), bw)


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of ``-ln p[true]`` with probabilities floored at 1e-12."""
    probs = _wrap(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"label {bad} out of range for {k} classes")
    rows = np.arange(n)
    p = probs.data[rows, labels]
    clamped = np.maximum(p, PROB_FLOOR)
    loss = -np.log(clamped).mean()

    def bw(g):
        gp = np.zeros_like(probs.data)
        live = p >= PROB_FLOOR
        gp[rows[live], labels[live]] = -g / (n * clamped[live])
        return (gp,)
    return record("cross_entropy", np.asarray(loss, dtype=probs.dtype), (probs,), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """``x @ w + b`` over the last axis; ``w`` is ``[in, out]``."""
    y = x.data @ w.data
    if b is not None:
        y = y + b.data

    def bw(g):
        gx = g @ w.data.T
        gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)
    parents = (x, w, b) if b is not None else (x, w)
    return record("linear", y, parents, bw)


def _pad_amounts(kernel: int, padding: str) -> tuple[int, int]:
    if padding == "same":
        left = (kernel - 1) // 2
        return left, kernel - 1 - left
    if padding == "valid":
        return 0, 0
    raise ValueError(f"unknown padding {padding!r}")


def conv1d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation over ``x`` of shape ``[batch, in_ch, length]``.

    ``w`` is ``[out_ch, in_ch, kernel]``; "same" padding keeps the length at
    stride 1.
    """
    k = w.shape[2]
    left, right = _pad_amounts(k, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if left or right else x.data
    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]  # [B, Cin, Lout, K]
    lout = cols.shape[2]
    y = np.einsum("bclk,ock->bol", cols, w.data, optimize=True)
    if b is not None:
        y = y + b.data[None, :, None]

    def bw(g):
        gw = np.einsum("bclk,bol->ock", cols, g, optimize=True)
        gcols = np.einsum("ock,bol->bclk", w.data, g, optimize=True)
        gxp = np.zeros_like(xp)
        span = stride * (lout - 1) + 1
        for j in range(k):
            gxp[:, :, j:j + span:stride] += gcols[..., j]
        gx = gxp[:, :, left:gxp.shape[2] - right] if left or right else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))
    parents = (x, w, b) if b is not None else (x, w)
    return record("conv1d", y.astype(x.dtype, copy=False), parents, bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.9,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation of ``[batch, channels, length]`` input.

    In training mode the running statistics are updated in place:
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    axes = (0, 2)
    shp = (1, -1, 1)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    y = xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)
    m = x.shape[0] * x.shape[2]

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shp)
        if training:
            gx = (inv.reshape(shp) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes).reshape(shp)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(shp)
            )
        else:
            gx = gxhat * inv.reshape(shp)
        return gx, ggamma, gbeta
    return record("batch_norm", y.astype(x.dtype, copy=False), (x, gamma, beta), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def bw(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gxhat = g * gamma.data
        gx = (inv / d) * (d * gxhat - gxhat.sum(axis=-1, keepdims=True)
                          - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, ggamma, gbeta
    return record("layer_norm", y.astype(x.dtype, copy=False), (x, gamma, beta), bw)
