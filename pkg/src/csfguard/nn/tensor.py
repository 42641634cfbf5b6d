"""Tensor carrier and tape-based reverse-mode differentiation.

Operations only record onto a tape when one is active (``with GradTape()``)
and at least one input requires a gradient, so inference runs without any
bookkeeping.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class Tensor:
    """An ndarray plus the flags the tape needs.

    ``data`` keeps whatever float dtype it was created with (float32 for
    training, float64 for gradient checks).
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}{tag})"

    # arithmetic sugar; the heavy lifting lives in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class TapeError(RuntimeError):
    pass


class _Node:
    __slots__ = ("out", "parents", "backward_fn", "op")

    def __init__(self, op: str, out: Tensor, parents: Sequence[Tensor], backward_fn: Callable):
        self.op = op
        self.out = out
        self.parents = tuple(parents)
        self.backward_fn = backward_fn


_ACTIVE: list["GradTape"] = []


class GradTape:
    """Records forward operations in execution order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> GradTape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(op: str, out_data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` and, if needed, put the op on the active tape.

    ``backward_fn(g)`` returns one gradient (or None) per parent.
    """
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.nodes.append(_Node(op, out, parents, backward_fn))
    return out


def backward(
    tape: GradTape,
    loss: Tensor,
    params: Iterable[Tensor] | None = None,
    loss_grad=1.0,
) -> dict[Tensor, np.ndarray]:
    """Replay ``tape`` in reverse from ``loss``.

    Returns a gradient for each tensor in ``params`` (zeros for parameters the
    forward pass never touched); with ``params=None`` every leaf that requires
    a gradient and appears on the tape is returned.
    """
    if not tape.nodes:
        raise TapeError("cannot run backward on an empty tape")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.broadcast_to(np.asarray(loss_grad, dtype=loss.dtype), loss.shape).copy()

    produced = set()
    leaves: dict[int, Tensor] = {}
    for node in tape.nodes:
        produced.add(id(node.out))
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if not np.all(np.isfinite(pg)):
                raise FloatingPointError(f"non-finite gradient flowing out of {node.op}")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if key not in produced:
                leaves[key] = p

    if params is None:
        return {t: grads[k] for k, t in leaves.items()}
    out = {}
    for p in params:
        g = grads.get(id(p))
        out[p] = g.astype(p.dtype, copy=False) if g is not None else np.zeros_like(p.data)
    return out
