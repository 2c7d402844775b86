"""Losses and the end-to-end training loop."""

from __future__ import annotations

import contextlib
import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import ops
from .checkpoint import Checkpoint, make_checkpoint, save_checkpoint
from .errors import DataError, NumericError, ParameterError
from .network import AmpNet, ModelConfig
from .optim import Adam
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 200
    stages: int = 9
    lambda_o: float = 0.01
    eps_charb: float = 1e-3
    ratio: float = 0.25
    seed: int = 0
    corpus: Optional[str] = None
    n_blocks: int = 8912
    channels: int = 32
    block_size: int = 33
    model: str = "amp-net"
    learn_phi: bool = True
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None

    def validate(self) -> None:
        if self.lr <= 0 or self.eps_charb <= 0:
            raise ParameterError("learning rate and Charbonnier eps must be positive")
        if min(self.batch_size, self.epochs, self.n_blocks, self.channels, self.block_size) < 1:
            raise ParameterError("batch size, epochs, block count, channels and block size must be positive")
        if self.stages < 1:
            raise ParameterError(f"need at least one stage, got {self.stages}")
        if self.lambda_o < 0:
            raise ParameterError(f"lambda_o must be non-negative, got {self.lambda_o}")
        if not 0 < self.ratio <= 1:
            raise ParameterError(f"CS ratio must lie in (0, 1], got {self.ratio}")

    def model_config(self, **overrides) -> ModelConfig:
        kw = dict(ratio=self.ratio, block_size=self.block_size, stages=self.stages,
                  channels=self.channels, seed=self.seed, learn_phi=self.learn_phi,
                  eps_charb=self.eps_charb)
        kw.update(overrides)
        return ModelConfig.for_kind(self.model, **kw)

    def to_dict(self) -> dict:
        """Config echo for manifests; the output location is left out so a
        checkpoint's bytes do not depend on where it is written."""
        d = asdict(self)
        d.pop("checkpoint_path")
        return d


class LossRecord(NamedTuple):
    epoch: int
    total: float
    recon: float
    ortho: float


def loss_recon(x_hat, x, eps: float = 1e-3) -> Tensor:
    return ops.charbonnier(x_hat, x, eps)


def loss_ortho(sym_residuals) -> Tensor:
    """Sum of the per-stage symmetry residuals."""
    if not sym_residuals:
        raise ParameterError("loss_ortho needs at least one stage residual")
    total = sym_residuals[0]
    for r in sym_residuals[1:]:
        total = ops.add(total, r)
    return total


def loss_total(l_r, l_o, lambda_o: float):
    if lambda_o == 0:
        return l_r
    return ops.add(l_r, ops.mul(lambda_o, l_o))


@contextlib.contextmanager
def frozen_bn(model: AmpNet):
    """Run train-mode forwards without letting them move the BN running stats."""
    saved = {k: (st.mean.copy(), st.var.copy()) for k, st in model.store.bn.items()}
    try:
        yield
    finally:
        for k, (mu, var) in saved.items():
            model.store.bn[k].mean, model.store.bn[k].var = mu, var


def batch_losses(model: AmpNet, x: np.ndarray, cfg: TrainConfig, mode: str = "train"):
    """Forward one batch through sensing + reconstruction; returns (total, L_R, L_O) tensors."""
    y = model.sense(x)
    res = model.forward(y, mode, with_sym=True)
    l_r = loss_recon(res.x, x, cfg.eps_charb)
    l_o = loss_ortho(res.sym_residuals) if res.sym_residuals else Tensor(0.0)
    return loss_total(l_r, l_o, cfg.lambda_o), l_r, l_o


def _batches(n: int, size: int, order: np.ndarray):
    for start in range(0, n, size):
        yield order[start:start + size]


def evaluate(model: AmpNet, blocks: np.ndarray, cfg: TrainConfig) -> tuple[float, float, float]:
    """Block-weighted mean losses over ``blocks`` using batch statistics, no updates."""
    sums = np.zeros(3)
    with frozen_bn(model):
        for idx in _batches(len(blocks), cfg.batch_size, np.arange(len(blocks))):
            sums += len(idx) * np.array([t.item() for t in batch_losses(model, blocks[idx], cfg)])
    return tuple(sums / len(blocks))


@dataclass
class TrainResult:
    model: AmpNet
    optimizer: Adam
    history: list = field(default_factory=list)

    def checkpoint(self, cfg: TrainConfig) -> Checkpoint:
        epoch = self.history[-1].epoch if self.history else 0
        return make_checkpoint(self.model, self.optimizer, cfg.to_dict(), epoch, self.history)


def train(model: AmpNet, cfg: TrainConfig, blocks: np.ndarray,
          on_epoch: Optional[Callable[[LossRecord], None]] = None) -> TrainResult:
    """Train ``model`` end to end on flattened blocks in [0, 1].

    Each batch is sensed with the model's own W_phi, reconstructed, and the
    Charbonnier losses are minimised with Adam. ``history[0]`` holds the losses
    before any update (epoch 0). Deterministic for a fixed ``cfg.seed``.
    """
    cfg.validate()
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2 or len(blocks) == 0:
        raise DataError("training corpus is empty")
    if blocks.shape[1] != model.config.n_p:
        raise DataError(f"blocks have {blocks.shape[1]} pixels, model expects {model.config.n_p}")
    if len(blocks) < cfg.batch_size:
        raise DataError(f"corpus has {len(blocks)} blocks, fewer than one batch of {cfg.batch_size}")

    opt = Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model, opt, [LossRecord(0, *evaluate(model, blocks, cfg))])
    if on_epoch:
        on_epoch(result.history[0])

    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(3)
        for idx in _batches(len(blocks), cfg.batch_size, rng.permutation(len(blocks))):
            try:
                with Tape() as tape:
                    total, l_r, l_o = batch_losses(model, blocks[idx], cfg)
                if not np.isfinite(total.item()):
                    raise NumericError(f"non-finite loss at epoch {epoch}")
            except NumericError as exc:
                if cfg.checkpoint_path:
                    save_checkpoint(result.checkpoint(cfg), f"{cfg.checkpoint_path}.diverged")
                raise NumericError(f"training aborted at epoch {epoch}: {exc}") from exc
            tape.backward(total, opt.params)
            opt.step()
            sums += len(idx) * np.array([total.item(), l_r.item(), l_o.item()])

        record = LossRecord(epoch, *(sums / len(blocks)))
        result.history.append(record)
        log.info("epoch %d  L_total=%.6f  L_R=%.6f  L_O=%.6f", *record)
        if on_epoch:
            on_epoch(record)
        if cfg.checkpoint_every and cfg.checkpoint_path and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(result.checkpoint(cfg), cfg.checkpoint_path)
    return result


def symmetry_residuals(model: AmpNet, blocks: np.ndarray) -> list[float]:
    """Per-stage charbonnier(block4(block2(u)), u) on ``blocks`` (batch stats, no updates)."""
    with frozen_bn(model):
        res = model.forward(model.sense(blocks).data, "train", with_sym=True)
    return [r.item() for r in res.sym_residuals]


def zero_cnn(model: AmpNet) -> AmpNet:
    """Copy of ``model`` whose balanced CNNs are the identity (block 5 zeroed)."""
    clone = copy.deepcopy(model)
    for stage in clone.stages:
        stage.block5.weight.data[...] = 0.0
        stage.block5.bias.data[...] = 0.0
    return clone
