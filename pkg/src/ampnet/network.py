"""AMP-Net and AMPA-Net: AMP unrolled into K stages with learned sensing,
learned initialization and a balanced CNN per stage."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .amp import pinv_apply
from .attention import ChannelAttention, InitAttention, SpatialAttention
from .errors import DimensionError, NumericError, ParameterError
from .layers import BatchNorm, Conv, ParamStore
from .sensing import make_gaussian_phi, measurement_size
from .tensor import Tensor, as_tensor

KINDS = ("amp-net", "ampa-net")


@dataclass
class ModelConfig:
    """Architecture of one network. ``ampa-net`` switches all three attentions on."""

    ratio: float = 0.25
    block_size: int = 33
    stages: int = 9
    channels: int = 32
    seed: int = 0
    learn_phi: bool = True
    unrolled: bool = True
    init_attention: bool = False
    spatial_attention: bool = False
    channel_attention: bool = False
    attn_hidden: int = 8
    mlp_hidden: int = 128
    eps_charb: float = 1e-3

    @classmethod
    def for_kind(cls, kind: str, **kw) -> "ModelConfig":
        if kind not in KINDS:
            raise ParameterError(f"model kind must be one of {KINDS}, got {kind!r}")
        flag = kind == "ampa-net"
        kw.setdefault("init_attention", flag)
        kw.setdefault("spatial_attention", flag)
        kw.setdefault("channel_attention", flag)
        return cls(**kw)

    @property
    def kind(self) -> str:
        if self.init_attention or self.spatial_attention or self.channel_attention:
            return "ampa-net"
        return "amp-net"

    @property
    def n_p(self) -> int:
        return self.block_size * self.block_size

    @property
    def m_p(self) -> int:
        return measurement_size(self.ratio, self.n_p)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        measurement_size(self.ratio, self.n_p)
        if self.stages < 0:
            raise ParameterError(f"stage count must be non-negative, got {self.stages}")
        if min(self.block_size, self.channels, self.attn_hidden, self.mlp_hidden) < 1:
            raise ParameterError("block size, channel and hidden widths must be positive")


class BalancedCNN:
    """One stage's five-block network with an input-to-output skip.

    block1 lifts to C channels, block2 (conv-BN-ReLU-conv) plays the analysis
    transform, block3 (BN-ReLU) the shrinkage, block4 (conv-BN-ReLU-conv) the
    synthesis transform and block5 maps back to one channel.
    """

    def __init__(self, store: ParamStore, name: str, cfg: ModelConfig):
        c = cfg.channels
        self.block_size = cfg.block_size
        self.eps = cfg.eps_charb
        self.block1 = Conv(store, f"{name}.block1", 1, c)
        self.block2 = (Conv(store, f"{name}.block2.conv1", c, c),
                       BatchNorm(store, f"{name}.block2.bn", c),
                       Conv(store, f"{name}.block2.conv2", c, c))
        self.block3 = BatchNorm(store, f"{name}.block3.bn", c)
        self.block4 = (Conv(store, f"{name}.block4.conv1", c, c),
                       BatchNorm(store, f"{name}.block4.bn", c),
                       Conv(store, f"{name}.block4.conv2", c, c))
        self.block5 = Conv(store, f"{name}.block5", c, 1)
        self.channel_attn = (ChannelAttention(store, f"{name}.channel_attn", c, cfg.attn_hidden)
                             if cfg.channel_attention else None)
        self.spatial_attn = SpatialAttention(store, f"{name}.spatial_attn", c) if cfg.spatial_attention else None

    @staticmethod
    def _transform(block, x, mode, update=True):
        conv1, bn, conv2 = block
        return conv2(ops.relu(bn(conv1(x), mode, update)))

    def __call__(self, r, mode: str = "train", with_sym: bool = True):
        """Map ``r`` [B, n_p] to ``(x [B, n_p], sym_residual or None)``."""
        b = self.block_size
        if r.ndim != 2 or r.shape[1] != b * b:
            raise DimensionError(f"balanced CNN expects [B, {b * b}], got {r.shape}")
        img = ops.reshape(r, (r.shape[0], 1, b, b))
        u = self.block1(img)
        d = self._transform(self.block2, u, mode)
        v = ops.relu(self.block3(d, mode))
        w = self._transform(self.block4, v, mode)
        if self.channel_attn is not None:
            w = self.channel_attn(w, mode)
        if self.spatial_attn is not None:
            w = self.spatial_attn(w)
        x = ops.add(self.block5(w), img)
        sym = None
        if with_sym:
            # block4 applied straight after block2 should give u back; its BN
            # runs on batch stats here without touching the running stats.
            sym = ops.charbonnier(self._transform(self.block4, d, mode, update=False), u, self.eps)
        return ops.reshape(x, r.shape), sym


@dataclass
class ForwardResult:
    x: Tensor
    per_stage: list = field(default_factory=list)  # (X^(k), Z^(k)) for k = 0..K
    sym_residuals: list = field(default_factory=list)


class AmpNet:
    """Unrolled AMP network; attention modules are present per the config flags.

    With ``unrolled=False`` the model degenerates to one balanced CNN applied
    to a fixed pseudo-inverse estimate (the "CNN only" ablation).
    """

    def __init__(self, config: Optional[ModelConfig] = None, **kw):
        cfg = config or ModelConfig(**kw)
        cfg.validate()
        self.config = cfg
        store = self.store = ParamStore(cfg.seed)
        n, m = cfg.n_p, cfg.m_p

        learn_phi = cfg.learn_phi and cfg.unrolled
        if learn_phi:
            w_phi = store.rng("w_phi").normal(0.0, 1.0 / np.sqrt(n), (m, n))
        else:
            w_phi = make_gaussian_phi(cfg.ratio, n, cfg.seed).phi
        self.w_phi = store.add("w_phi", w_phi, trainable=learn_phi)
        if cfg.unrolled:
            self.w_q = store.add("w_q", store.rng("w_q").normal(0.0, 1.0 / np.sqrt(m), (n, m)))
        else:
            self.w_q = store.add("w_q", pinv_apply(w_phi, np.eye(m)), trainable=False)

        self.init_attn = (InitAttention(store, "init_attn", m, n, cfg.mlp_hidden)
                          if cfg.init_attention else None)
        n_stages = cfg.stages if cfg.unrolled else 1
        self.stages = [BalancedCNN(store, f"stage{k}", cfg) for k in range(n_stages)]
        self.onsager = [store.add(f"stage{k}.onsager_phi", 0.1) for k in range(n_stages)]

    @property
    def kind(self) -> str:
        return self.config.kind

    def parameters(self):
        return self.store.trainable()

    def count_parameters(self) -> int:
        return count_parameters(self)

    def sense(self, x):
        """Measurements ``W_phi x`` for blocks ``x`` [B, n_p]; differentiable in W_phi."""
        return ops.dense(as_tensor(x), self.w_phi)

    def forward(self, y, mode: str = "train", with_sym: bool = True) -> ForwardResult:
        y = as_tensor(y)
        cfg = self.config
        if y.ndim != 2 or y.shape[1] != cfg.m_p:
            raise DimensionError(f"expected measurements [B, {cfg.m_p}], got {y.shape}")
        x = ops.dense(y, self.w_q)
        if self.init_attn is not None:
            x = self.init_attn(y, x)
        z = ops.sub(y, ops.dense(x, self.w_phi))
        result = ForwardResult(x=x, per_stage=[(x, z)])

        for k, (stage, phi_k) in enumerate(zip(self.stages, self.onsager)):
            r = ops.add(ops.matmul(z, self.w_phi), x) if cfg.unrolled else x
            x, sym = stage(r, mode, with_sym)
            z = ops.add(ops.sub(y, ops.dense(x, self.w_phi)), ops.mul(phi_k, z))
            if not (np.all(np.isfinite(x.data)) and np.all(np.isfinite(z.data))):
                raise NumericError(f"non-finite values after stage {k + 1}")
            result.per_stage.append((x, z))
            if sym is not None:
                result.sym_residuals.append(sym)
        result.x = x
        return result

    __call__ = forward

    def reconstruct(self, y: np.ndarray, batch: int = 256) -> np.ndarray:
        """Eval-mode reconstruction of measurement rows ``y`` [B, m_p] as plain arrays."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        out = [self.forward(y[i:i + batch], mode="eval", with_sym=False).x.data
               for i in range(0, len(y), batch)]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.n_p))


def count_parameters(model: AmpNet) -> int:
    return int(sum(p.size for p in model.store.params.values()))


def build_model(kind: str, **kw) -> AmpNet:
    return AmpNet(ModelConfig.for_kind(kind, **kw))
