"""Handcrafted approximate message passing with a block DCT sparsifying basis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.fft
import scipy.linalg

from .errors import DimensionError, DivergenceError, ParameterError, SingularityError
from .sensing import SensingSystem

MAX_COND = 1e12
MAD_SCALE = 0.6745  # median(|N(0, 1)|)


class TransformD:
    """Orthonormal analysis/synthesis pair acting on flattened vectors.

    ``analysis(x) = D @ x`` and ``synthesis(s) = D.T @ s``.
    """

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise DimensionError(f"transform must be square, got {self.matrix.shape}")

    @classmethod
    def identity(cls, n: int) -> "TransformD":
        return cls(np.eye(n))

    @classmethod
    def dct2(cls, block: int = 33) -> "TransformD":
        """2-D orthonormal DCT-II on ``block x block`` patches flattened row-major."""
        c = scipy.fft.dct(np.eye(block), norm="ortho", axis=0)
        return cls(np.kron(c, c))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def analysis(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def synthesis(self, s: np.ndarray) -> np.ndarray:
        return self.matrix.T @ s


@dataclass
class AmpState:
    s: np.ndarray
    z: np.ndarray
    onsager: float
    k: int
    tau: float


def soft_threshold(v, tau: float) -> np.ndarray:
    if tau < 0:
        raise ParameterError(f"threshold must be non-negative, got {tau}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def eta_prime(v, tau: float) -> np.ndarray:
    """Derivative of :func:`soft_threshold` almost everywhere: 1 where |v| > tau."""
    return (np.abs(np.asarray(v)) > tau).astype(np.float64)


def pinv_apply(phi: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minimum-norm solution ``phi.T @ solve(phi @ phi.T, y)``.

    ``y`` may be ``[m]`` or ``[m, B]`` (one column per right-hand side).
    """
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != phi.shape[0]:
        raise DimensionError(f"pinv_apply: phi {phi.shape} vs measurements {y.shape}")
    gram = phi @ phi.T
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise SingularityError(f"phi @ phi.T is numerically singular (condition {cond:.3g})")
    return phi.T @ scipy.linalg.solve(gram, y, assume_a="pos")


def amp_reconstruct(
    y: np.ndarray,
    sys: SensingSystem | np.ndarray,
    transform: Optional[TransformD] = None,
    max_iters: int = 100,
    tol: float = 1e-8,
    alpha: float = 1.0,
    onsager: bool = True,
    init: Optional[np.ndarray] = None,
    callback: Optional[Callable[[AmpState], None]] = None,
) -> tuple[np.ndarray, list[float]]:
    """Recover ``x`` from ``y = phi @ x`` by AMP in the transform domain.

    Starts from the pseudo-inverse estimate (``init`` may supply it precomputed)
    and iterates soft thresholding with the threshold ``alpha * ||z|| / sqrt(m)``.
    The pseudo-inverse start has a zero residual whenever phi has full row
    rank, so the first threshold is calibrated from the median absolute value
    of the pseudo-data instead. ``onsager=False`` drops the memory term, which
    turns the iteration into plain iterative soft thresholding.

    Returns the signal estimate and the residual norm after each iteration
    (index 0 is the initial residual).
    """
    phi = sys.phi if isinstance(sys, SensingSystem) else np.asarray(sys, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = phi.shape
    if y.shape != (m,):
        raise DimensionError(f"amp_reconstruct: measurements {y.shape} do not match phi {phi.shape}")
    transform = transform or TransformD.identity(n)
    if transform.n != n:
        raise DimensionError(f"transform acts on {transform.n}-vectors, phi on {n}-vectors")

    a = phi @ transform.matrix.T
    x0 = pinv_apply(phi, y) if init is None else np.asarray(init, dtype=np.float64)
    s = transform.analysis(x0)
    z = y - a @ s
    y_norm = np.linalg.norm(y)
    trace = [float(np.linalg.norm(z))]
    if y_norm == 0:
        return transform.synthesis(np.zeros(n)), trace

    blowups = 0
    for k in range(1, max_iters + 1):
        v = a.T @ z + s
        z_prev = trace[-1]
        if z_prev > 1e-10 * y_norm:
            tau = alpha * z_prev / np.sqrt(m)
        elif m < n:
            tau = alpha * np.median(np.abs(v)) / MAD_SCALE
        else:
            tau = 0.0
        s = soft_threshold(v, tau)
        b = eta_prime(v, tau).sum() / m if onsager else 0.0
        z = y - a @ s + b * z
        z_norm = float(np.linalg.norm(z))
        trace.append(z_norm)
        if callback is not None:
            callback(AmpState(s=s, z=z, onsager=b, k=k, tau=tau))

        if not np.isfinite(z_norm):
            raise DivergenceError(f"AMP residual became non-finite at iteration {k}", trace)
        blowups = blowups + 1 if z_norm > 10 * y_norm else 0
        if blowups >= 5:
            raise DivergenceError(f"AMP diverged: residual above 10x ||y|| for 5 iterations (k={k})", trace)
        if z_norm <= tol * y_norm or (z_prev > 0 and abs(z_norm - z_prev) <= tol * z_prev):
            break

    return transform.synthesis(s), trace
