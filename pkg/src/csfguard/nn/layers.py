"""Layer parameter containers and their forward rules."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .tensor import Tensor

BN_MOMENTUM = 0.9
BN_EPS = 1e-5
LN_EPS = 1e-6
RELU_GAIN = math.sqrt(2.0)


class LayerKind(str, enum.Enum):
    CONV1D = "Conv1D"
    BATCHNORM = "BatchNorm"
    LAYERNORM = "LayerNorm"
    DENSE = "Dense"
    MHA = "MultiHeadAttention"


class ShapeError(ValueError):
    """Raised when a layer receives input of the wrong shape."""

    def __init__(self, layer: str, expected, actual):
        self.layer = layer
        self.expected = expected
        self.actual = tuple(actual)
        super().__init__(f"layer {layer!r}: expected input shape {expected}, got {list(self.actual)}")


@dataclass
class LayerParams:
    name: str
    kind: LayerKind
    weights: dict[str, Tensor]
    hyper: dict = field(default_factory=dict)
    bn_state: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self) -> dict[str, Tensor]:
        return {f"{self.name}.{k}": t for k, t in self.weights.items()}


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float = 1.0) -> np.ndarray:
    # Kaiming uniform: variance gain**2 / fan_in
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _param(arr: np.ndarray, name: str) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


def conv1d_params(name, in_ch, out_ch, kernel, rng, stride=1, padding="same", dtype=np.float32):
    w = _uniform(rng, (out_ch, in_ch, kernel), in_ch * kernel, dtype, RELU_GAIN)
    return LayerParams(name, LayerKind.CONV1D,
                       {"weight": _param(w, f"{name}.weight"),
                        "bias": _param(np.zeros(out_ch, dtype), f"{name}.bias")},
                       {"in_ch": in_ch, "out_ch": out_ch, "kernel": kernel,
                        "stride": stride, "padding": padding})


def dense_params(name, fan_in, fan_out, rng, dtype=np.float32, gain=1.0):
    w = _uniform(rng, (fan_in, fan_out), fan_in, dtype, gain)
    return LayerParams(name, LayerKind.DENSE,
                       {"weight": _param(w, f"{name}.weight"),
                        "bias": _param(np.zeros(fan_out, dtype), f"{name}.bias")},
                       {"in": fan_in, "out": fan_out})


def batchnorm_params(name, channels, dtype=np.float32):
    return LayerParams(name, LayerKind.BATCHNORM,
                       {"gamma": _param(np.ones(channels, dtype), f"{name}.gamma"),
                        "beta": _param(np.zeros(channels, dtype), f"{name}.beta")},
                       {"channels": channels},
                       {"running_mean": np.zeros(channels, dtype),
                        "running_var": np.ones(channels, dtype)})


def layernorm_params(name, width, dtype=np.float32):
    return LayerParams(name, LayerKind.LAYERNORM,
                       {"gamma": _param(np.ones(width, dtype), f"{name}.gamma"),
                        "beta": _param(np.zeros(width, dtype), f"{name}.beta")},
                       {"width": width})


def mha_params(name, width, heads, rng, dtype=np.float32):
    if heads < 1 or width % heads:
        raise ValueError(f"{name}: head count {heads} must divide width {width}")
    weights = {}
    for p in ("q", "k", "v", "o"):
        weights[f"w{p}"] = _param(_uniform(rng, (width, width), width, dtype), f"{name}.w{p}")
        weights[f"b{p}"] = _param(np.zeros(width, dtype), f"{name}.b{p}")
    return LayerParams(name, LayerKind.MHA, weights, {"width": width, "heads": heads})


def _check(params: LayerParams, x: Tensor, rank: int, dim: int, expected_size: int, expected_desc):
    if x.data.ndim != rank or x.shape[dim] != expected_size:
        raise ShapeError(params.name, expected_desc, x.shape)


def multi_head_attention(params: LayerParams, x: Tensor) -> Tensor:
    """Bidirectional scaled dot-product attention over ``[batch, seq, width]``."""
    w = params.weights
    b, n, d = x.shape
    h = params.hyper["heads"]
    dh = d // h

    def split(t):
        return F.transpose(F.reshape(t, (b, n, h, dh)), (0, 2, 1, 3))

    q = split(F.linear(x, w["wq"], w["bq"]))
    k = split(F.linear(x, w["wk"], w["bk"]))
    v = split(F.linear(x, w["wv"], w["bv"]))
    scores = F.scale(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = F.softmax(scores, axis=-1)
    ctx = F.matmul(attn, v)
    ctx = F.reshape(F.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return F.linear(ctx, w["wo"], w["bo"])


def layer_forward(params: LayerParams, x: Tensor, mode: str = "infer") -> Tensor:
    """Apply one layer.

    Conv1D and BatchNorm take ``[batch, channels, length]``; Dense and the
    norm/attention layers of the encoder take ``[..., width]``.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', not {mode!r}")
    kind, hp, w = params.kind, params.hyper, params.weights
    if kind is LayerKind.CONV1D:
        _check(params, x, 3, 1, hp["in_ch"], ["batch", hp["in_ch"], "length"])
        return F.conv1d(x, w["weight"], w["bias"], hp.get("stride", 1), hp.get("padding", "same"))
    if kind is LayerKind.BATCHNORM:
        _check(params, x, 3, 1, hp["channels"], ["batch", hp["channels"], "length"])
        return F.batch_norm(x, w["gamma"], w["beta"], params.bn_state["running_mean"],
                            params.bn_state["running_var"], training=(mode == "train"),
                            momentum=BN_MOMENTUM, eps=BN_EPS)
    if kind is LayerKind.LAYERNORM:
        if x.data.ndim < 1 or x.shape[-1] != hp["width"]:
            raise ShapeError(params.name, ["...", hp["width"]], x.shape)
        return F.layer_norm(x, w["gamma"], w["beta"], LN_EPS)
    if kind is LayerKind.DENSE:
        if x.data.ndim < 1 or x.shape[-1] != hp["in"]:
            raise ShapeError(params.name, ["...", hp["in"]], x.shape)
        return F.linear(x, w["weight"], w["bias"])
    if kind is LayerKind.MHA:
        _check(params, x, 3, 2, hp["width"], ["batch", "seq", hp["width"]])
        return multi_head_attention(params, x)
    raise ValueError(f"unknown layer kind {kind}")
