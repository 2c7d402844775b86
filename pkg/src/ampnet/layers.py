"""Parameter storage and the few layer types the networks are built from."""

from __future__ import annotations

import zlib

import numpy as np

from . import ops
from .errors import CheckpointError
from .tensor import DTYPE, Param


class ParamStore:
    """Named parameters plus batch-norm running statistics of one model.

    Every parameter draws its initial values from a generator seeded by
    ``(seed, crc32(name))``, so a tensor's init does not depend on which
    other tensors exist or the order they were created in.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self.params: dict[str, Param] = {}
        self.bn: dict[str, ops.BNState] = {}

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def add(self, name: str, data, trainable: bool = True) -> Param:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(name, data, trainable=trainable)
        self.params[name] = p
        return p

    def add_bn(self, name: str, channels: int) -> ops.BNState:
        state = ops.BNState.fresh(channels)
        self.bn[name] = state
        return state

    def trainable(self) -> list[Param]:
        return [p for p in self.params.values() if p.requires_grad]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.mean
            out[f"{name}.running_var"] = st.var
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        """Strict load: every stored tensor must be present with a matching shape."""
        expected = self.tensors()
        missing = sorted(set(expected) - set(tensors))
        unknown = sorted(set(tensors) - set(expected))
        if missing:
            raise CheckpointError(f"checkpoint is missing tensors: {', '.join(missing[:8])}")
        if unknown:
            raise CheckpointError(f"checkpoint has unknown tensors: {', '.join(unknown[:8])}")
        for name, arr in tensors.items():
            if arr.shape != expected[name].shape:
                raise CheckpointError(f"tensor {name} has shape {arr.shape}, model expects {expected[name].shape}")
        for name, p in self.params.items():
            p.data = np.array(tensors[name], dtype=DTYPE)
        for name, st in self.bn.items():
            st.mean = np.array(tensors[f"{name}.running_mean"], dtype=DTYPE)
            st.var = np.array(tensors[f"{name}.running_var"], dtype=DTYPE)


class Conv:
    """3x3 (by default) same-padded convolution, Xavier-uniform weights, zero bias."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, size: int = 3):
        fan_in, fan_out = c_in * size * size, c_out * size * size
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = store.rng(f"{name}.weight").uniform(-bound, bound, (c_out, c_in, size, size))
        self.weight = store.add(f"{name}.weight", w)
        self.bias = store.add(f"{name}.bias", np.zeros(c_out))

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias)


class BatchNorm:
    def __init__(self, store: ParamStore, name: str, channels: int):
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.state = store.add_bn(name, channels)

    def __call__(self, x, mode: str, update: bool = True):
        return ops.batchnorm(x, self.gamma, self.beta, self.state, mode, update)


class Linear:
    """Fully connected layer with Gaussian weights (std 1/sqrt(fan_in)) and zero bias."""

    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int):
        w = store.rng(f"{name}.weight").normal(0.0, 1.0 / np.sqrt(n_in), (n_out, n_in))
        self.weight = store.add(f"{name}.weight", w)
        self.bias = store.add(f"{name}.bias", np.zeros(n_out))

    def __call__(self, x):
        return ops.add(ops.dense(x, self.weight), self.bias)
