"""Minimal numpy tensor math, layers, reverse-mode gradients and Adam."""
from .functional import cross_entropy, softmax
from .layers import LayerKind, LayerParams, ShapeError, layer_forward
from .optim import AdamState, adam_step
from .tensor import GradTape, TapeError, Tensor, backward

__all__ = [
    "AdamState",
    "GradTape",
    "LayerKind",
    "LayerParams",
    "ShapeError",
    "TapeError",
    "Tensor",
    "adam_step",
    "backward",
    "cross_entropy",
    "layer_forward",
    "softmax",
]
