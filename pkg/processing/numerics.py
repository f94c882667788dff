"""Dense matrix kernels, seeded randomness and scalar metrics."""
from __future__ import annotations

import numpy as np

from utils.errors import ShapeError

PSNR_CAP_DB = 100.0
_DISTANCE_BLOCK = 1 << 22


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical for a given seed on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(values) -> np.ndarray:
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeError("Expected a 2-D matrix", matrix.shape)
    return matrix


def pairwise_sq_distances(Z: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared euclidean distance between every row of ``Z`` and every row of ``C``."""
    Z = as_matrix(Z)
    C = as_matrix(C)
    if Z.size == 0 or C.size == 0:
        raise ShapeError("Distance operands must be nonempty", Z.shape, C.shape)
    if Z.shape[1] != C.shape[1]:
        raise ShapeError("Feature and code dimensions differ", Z.shape, C.shape)
    out = np.empty((Z.shape[0], C.shape[0]), dtype=np.float64)
    # Explicit differences keep exact zeros for identical rows; chunk to bound memory.
    chunk = max(1, _DISTANCE_BLOCK // max(1, C.shape[0] * C.shape[1]))
    for start in range(0, Z.shape[0], chunk):
        diff = Z[start : start + chunk, None, :] - C[None, :, :]
        out[start : start + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def matrix_stats(M: np.ndarray) -> tuple[float, float]:
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        raise ShapeError("matrix_stats needs a nonempty matrix", M.shape)
    return float(M.mean()), float(M.std(ddof=0))


def mse(x: np.ndarray, xhat: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ShapeError("Reconstruction shape differs from input", x.shape, xhat.shape)
    return float(np.mean((x - xhat) ** 2))


def psnr(x: np.ndarray, xhat: np.ndarray, peak: float = 1.0) -> float:
    if peak <= 0:
        raise ValueError(f"PSNR peak must be positive, got {peak}.")
    error = mse(x, xhat)
    if error == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak**2 / error))


def argmin_rows(M: np.ndarray) -> np.ndarray:
    # np.argmin returns the first occurrence, i.e. the lowest index on ties.
    return np.argmin(M, axis=1).astype(np.int64)


def argmax_rows(M: np.ndarray) -> np.ndarray:
    return np.argmax(M, axis=1).astype(np.int64)
