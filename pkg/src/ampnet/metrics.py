"""Reconstruction quality metrics."""

from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import DimensionError, ParameterError


def psnr(ref, test, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise DimensionError(f"psnr: image shapes differ, {ref.shape} vs {test.shape}")
    if peak <= 0:
        raise ParameterError(f"psnr peak must be positive, got {peak}")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def mean_psnr(values) -> float:
    """Arithmetic mean of finite PSNR values; infinite entries are dropped with a warning."""
    values = list(values)
    finite = [v for v in values if math.isfinite(v)]
    if len(finite) < len(values):
        warnings.warn(f"{len(values) - len(finite)} lossless reconstruction(s) excluded from the PSNR mean")
    return float(np.mean(finite)) if finite else math.inf
