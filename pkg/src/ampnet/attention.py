"""Initialization, channel and spatial attention used by AMPA-Net."""

from __future__ import annotations

from . import ops
from .errors import DimensionError
from .layers import BatchNorm, Conv, Linear, ParamStore


class InitAttention:
    """Softmax-normalised MLP gate on the linear initial estimate.

    ``a = softmax(fc2(relu(fc1(y))))`` and the output is ``x0 * a``.
    """

    def __init__(self, store: ParamStore, name: str, m_p: int, n_p: int, hidden: int = 128):
        self.m_p, self.n_p = m_p, n_p
        self.fc1 = Linear(store, f"{name}.fc1", m_p, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, n_p)

    def weights(self, y):
        return ops.softmax(self.fc2(ops.relu(self.fc1(y))))

    def __call__(self, y, x0):
        if y.shape[-1] != self.m_p or x0.shape[-1] != self.n_p or y.shape[0] != x0.shape[0]:
            raise DimensionError(f"init attention: y {y.shape} / x0 {x0.shape} vs (m_p={self.m_p}, n_p={self.n_p})")
        return ops.mul(x0, self.weights(y))


class ChannelAttention:
    """Per-channel gate from spatially pooled statistics.

    Average- and max-pooled maps go through one shared conv-BN-ReLU-conv tower
    (stacked along the batch axis so BN sees both), are summed, and squashed
    with a sigmoid into a [B, C, 1, 1] weight.
    """

    def __init__(self, store: ParamStore, name: str, channels: int, hidden: int = 8):
        self.channels = channels
        self.conv1 = Conv(store, f"{name}.conv1", channels, hidden)
        self.bn = BatchNorm(store, f"{name}.bn", hidden)
        self.conv2 = Conv(store, f"{name}.conv2", hidden, channels)

    def weights(self, f, mode: str = "train"):
        if f.ndim != 4 or f.shape[1] != self.channels:
            raise DimensionError(f"channel attention expects {self.channels} channels, got {f.shape}")
        pooled = ops.concat([ops.pool_global(f, "spatial", "avg"),
                             ops.pool_global(f, "spatial", "max")], axis=0)
        t = self.conv2(ops.relu(self.bn(self.conv1(pooled), mode)))
        t_avg, t_max = ops.split(t, 2, axis=0)
        return ops.sigmoid(ops.add(t_avg, t_max))

    def __call__(self, f, mode: str = "train"):
        return ops.mul(f, self.weights(f, mode))


class SpatialAttention:
    """Per-pixel gate: channel-pooled avg/max maps -> 3x3 conv -> sigmoid."""

    def __init__(self, store: ParamStore, name: str, channels: int):
        self.channels = channels
        self.conv = Conv(store, f"{name}.conv", 2, 1)

    def weights(self, f):
        if f.ndim != 4 or f.shape[1] != self.channels:
            raise DimensionError(f"spatial attention expects {self.channels} channels, got {f.shape}")
        pooled = ops.concat([ops.pool_global(f, "channel", "avg"),
                             ops.pool_global(f, "channel", "max")], axis=1)
        return ops.sigmoid(self.conv(pooled))

    def __call__(self, f):
        return ops.mul(f, self.weights(f))
