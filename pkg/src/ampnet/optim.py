"""Adam with bias correction."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import ContractError
from .tensor import Param


class Adam:
    """Adam keyed by parameter name so moment buffers survive checkpointing.

    Each :meth:`step` consumes the gradient of exactly one backward pass;
    stepping twice on the same gradients raises :class:`ContractError`.
    """

    def __init__(self, params: Iterable[Param], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        self._seen = {p.name: 0 for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if p._grad_stamp and p._grad_stamp == self._seen[p.name]:
                raise ContractError(f"stale gradient for {p.name}: no backward pass since last step")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[p.name] = b1 * self.m[p.name] + (1 - b1) * g
            v = self.v[p.name] = b2 * self.v[p.name] + (1 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            self._seen[p.name] = p._grad_stamp

    def state_dict(self) -> dict:
        tensors = {}
        for name in self.m:
            tensors[f"adam.m/{name}"] = self.m[name]
            tensors[f"adam.v/{name}"] = self.v[name]
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "tensors": tensors}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.lr, self.beta1, self.beta2, self.eps = (
            state["lr"], state["beta1"], state["beta2"], state["eps"])
        tensors = state["tensors"]
        for name in self.m:
            self.m[name] = np.array(tensors[f"adam.m/{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.array(tensors[f"adam.v/{name}"], dtype=self.v[name].dtype)
