"""Training data: luminance corpora, random block crops, synthetic blocks."""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .imageio import list_images, read_image
from .sensing import luminance


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return luminance(img) if img.ndim == 3 else img


def load_corpus(directory) -> list[np.ndarray]:
    """Luminance of every PGM/PPM/PNG in ``directory``, scaled to [0, 1]."""
    paths = list_images(directory)
    if not paths:
        raise DataError(f"no images found in {directory}")
    return [to_gray(read_image(p)) / 255.0 for p in paths]


def crop_blocks(images: list[np.ndarray], n_blocks: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``n_blocks`` random ``size x size`` crops (with replacement), flattened row-major."""
    usable = [im for im in images if im.shape[0] >= size and im.shape[1] >= size]
    if not usable:
        raise DataError(f"no image is at least {size}x{size}")
    out = np.empty((n_blocks, size * size))
    for i in range(n_blocks):
        im = usable[rng.integers(len(usable))]
        r = rng.integers(im.shape[0] - size + 1)
        c = rng.integers(im.shape[1] - size + 1)
        out[i] = im[r:r + size, c:c + size].reshape(-1)
    return out


def synthetic_image(height: int, width: int, rng: np.random.Generator, edges: int = 2) -> np.ndarray:
    """Piecewise-smooth image in [0, 1]: smooth ramps split by random straight edges."""
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)

    def ramp():
        a, b, c = rng.uniform(0.2, 0.8), *rng.uniform(-0.4, 0.4, 2)
        return a + b * yy + c * xx

    img = ramp()
    for _ in range(edges):
        angle = rng.uniform(0, np.pi)
        offset = rng.uniform(0.2, 0.8)
        side = np.cos(angle) * xx + np.sin(angle) * yy > offset * (abs(np.cos(angle)) + abs(np.sin(angle)))
        img = np.where(side, ramp(), img)
    return np.clip(img, 0.0, 1.0)


def synthetic_blocks(n_blocks: int, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([synthetic_image(size, size, rng, edges=int(rng.integers(1, 3))).reshape(-1)
                     for _ in range(n_blocks)])
