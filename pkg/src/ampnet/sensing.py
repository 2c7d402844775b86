"""Block-based compressed sensing: Gaussian sensing matrices, measurement,
block partitioning and luminance extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

BLOCK = 33
N_P = BLOCK * BLOCK

# Default ratio grid for benchmarking; 0.30 only shows up in ablations.
RATIOS = (0.01, 0.04, 0.10, 0.25, 0.40, 0.50)


def measurement_size(ratio: float, n_p: int) -> int:
    """``round(ratio * n_p)`` with halves rounded up, clamped to [1, n_p]."""
    if not 0 < ratio <= 1:
        raise ParameterError(f"CS ratio must lie in (0, 1], got {ratio}")
    return min(n_p, max(1, math.floor(ratio * n_p + 0.5)))


@dataclass
class SensingSystem:
    n_p: int
    ratio: float
    m_p: int
    phi: np.ndarray
    seed: int

    def __post_init__(self):
        if not 1 <= self.m_p <= self.n_p:
            raise ParameterError(f"need 1 <= m_p <= n_p, got m_p={self.m_p}, n_p={self.n_p}")
        if self.phi.shape != (self.m_p, self.n_p):
            raise DimensionError(f"phi has shape {self.phi.shape}, expected {(self.m_p, self.n_p)}")
        if not np.all(np.isfinite(self.phi)):
            raise ParameterError("phi contains non-finite entries")


def make_gaussian_phi(ratio: float, n_p: int = N_P, seed: int = 0) -> SensingSystem:
    """I.i.d. N(0, 1/m_p) sensing matrix, so columns have unit norm in expectation."""
    m_p = measurement_size(ratio, n_p)
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((m_p, n_p)) / np.sqrt(m_p)
    return SensingSystem(n_p=n_p, ratio=ratio, m_p=m_p, phi=phi, seed=seed)


def measure(sys: SensingSystem, x: np.ndarray) -> np.ndarray:
    """y = phi @ x for one block ``[n_p]`` or a batch of blocks ``[B, n_p]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != sys.n_p or x.ndim not in (1, 2):
        raise DimensionError(f"measure: signal shape {x.shape} does not match n_p={sys.n_p}")
    return x @ sys.phi.T


@dataclass(frozen=True)
class BlockGrid:
    height: int
    width: int
    block: int
    pad_bottom: int
    pad_right: int

    @property
    def rows(self) -> int:
        return (self.height + self.pad_bottom) // self.block

    @property
    def cols(self) -> int:
        return (self.width + self.pad_right) // self.block

    @property
    def count(self) -> int:
        return self.rows * self.cols


def partition_blocks(img: np.ndarray, block: int = BLOCK) -> tuple[np.ndarray, BlockGrid]:
    """Edge-pad ``img`` to a multiple of ``block`` and cut it into row-major blocks.

    Returns ``[n_blocks, block*block]`` with each block flattened row-major.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 1:
        raise DimensionError(f"partition_blocks expects a non-empty 2-d image, got {img.shape}")
    h, w = img.shape
    pb, pr = -h % block, -w % block
    padded = np.pad(img, ((0, pb), (0, pr)), mode="edge")
    grid = BlockGrid(h, w, block, pb, pr)
    blocks = (padded.reshape(grid.rows, block, grid.cols, block)
              .transpose(0, 2, 1, 3)
              .reshape(grid.count, block * block))
    return blocks, grid


def reassemble(blocks: np.ndarray, grid: BlockGrid) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.float64)
    b = grid.block
    if blocks.shape != (grid.count, b * b):
        raise DimensionError(f"reassemble: got blocks {blocks.shape}, grid needs {(grid.count, b * b)}")
    full = (blocks.reshape(grid.rows, grid.cols, b, b)
            .transpose(0, 2, 1, 3)
            .reshape(grid.rows * b, grid.cols * b))
    return full[:grid.height, :grid.width].copy()


LUMA = np.array([0.299, 0.587, 0.114])


def luminance(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of a ``[3, H, W]`` image."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise DimensionError(f"luminance expects [3, H, W], got {rgb.shape}")
    return np.tensordot(LUMA, rgb, axes=1)
