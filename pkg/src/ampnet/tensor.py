"""Dense tensors with tape-based reverse-mode differentiation.

Operations only build a graph while a :class:`Tape` is active::

    with Tape() as tape:
        loss = ops.charbonnier(model(x), target, 1e-3)
    tape.backward(loss)

Outside a tape every op is a plain numpy computation and nothing is recorded.
"""

from __future__ import annotations

import itertools
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError

# Double precision by default; AMPNET_FLOAT32=1 switches the default dtype at import time.
DTYPE = np.float32 if os.environ.get("AMPNET_FLOAT32") == "1" else np.float64

_local = threading.local()
_backward_ids = itertools.count(1)


def _tape_stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """N-dimensional real array, row-major, with an optional gradient slot."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._grad_stamp = 0

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the real work lives in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)


class Param(Tensor):
    """A named learnable tensor. ``grad`` always matches ``shape`` once touched."""

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable, name=name)
        self.grad = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of the ops executed while the tape is active."""

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().remove(self)

    def record(self, op: str, inputs: tuple, output: Tensor, backward) -> None:
        self.nodes.append(Node(op, inputs, output, backward))

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]

    def backward(self, loss: Tensor, params: Optional[Sequence[Param]] = None) -> None:
        backward(loss, self, params)


def record(op: str, inputs: Sequence, out_data: np.ndarray, backward) -> Tensor:
    """Wrap ``out_data`` in a Tensor and, if a tape is live and any input needs grad, record it."""
    tape = active_tape()
    needs = tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(op, tuple(inputs), out, backward)
    return out


def backward(loss: Tensor, tape: Tape, params: Optional[Sequence[Param]] = None) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss`` through ``tape``.

    Leaf gradients are overwritten, not accumulated. Params passed in ``params``
    that the loss does not reach get an all-zero gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    stamp = next(_backward_ids)
    produced = {id(n.output) for n in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = t

    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss

    for p in params or ():
        p.grad = np.zeros_like(p.data)
        p._grad_stamp = stamp
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        t.grad = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
        t._grad_stamp = stamp
