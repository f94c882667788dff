"""Codebooks, nearest-neighbor and transport-based assignment, multi-head quantization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from models.config import QuantizerConfig, SinkhornConfig
from processing.numerics import argmin_rows, as_matrix, pairwise_sq_distances
from processing.transport import sinkhorn
from utils.errors import ShapeError


@dataclass
class Codebook:
    codes: np.ndarray
    usage: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.codes = as_matrix(self.codes)
        if self.codes.shape[0] < 1:
            raise ShapeError("Codebook needs at least one code", self.codes.shape)
        if not np.all(np.isfinite(self.codes)):
            raise ValueError("Codebook entries must be finite.")
        if self.usage is None:
            self.usage = np.zeros(self.codes.shape[0], dtype=np.int64)

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    def record(self, indices: np.ndarray) -> None:
        self.usage += np.bincount(indices, minlength=self.size)


@dataclass
class Assignment:
    indices: np.ndarray
    plan_diag: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class UsageStats:
    fraction_used: float
    histogram: np.ndarray
    perplexity: float

    @property
    def least_used_count(self) -> int:
        return int(self.histogram.min())

    @property
    def codes_used(self) -> int:
        return int(np.count_nonzero(self.histogram))


def init_codebook(n: int, d: int, rng: np.random.Generator, scale: float | None = None) -> Codebook:
    """Uniform init in [-scale, scale]; the default scale is 1/n."""
    bound = 1.0 / n if scale is None else scale
    return Codebook(rng.uniform(-bound, bound, size=(n, d)))


def _check_dims(Z: np.ndarray, book: Codebook) -> np.ndarray:
    Z = as_matrix(Z)
    if Z.shape[1] != book.dim:
        raise ShapeError("Feature dimension does not match codebook", Z.shape, book.codes.shape)
    return Z


def nn_assign(Z: np.ndarray, book: Codebook, record: bool = True) -> Assignment:
    Z = _check_dims(Z, book)
    indices = argmin_rows(pairwise_sq_distances(Z, book.codes))
    if record:
        book.record(indices)
    return Assignment(indices)


def optvq_assign(
    Z: np.ndarray, book: Codebook, cfg: SinkhornConfig | None = None, record: bool = True
) -> Assignment:
    Z = _check_dims(Z, book)
    if Z.shape[0] < 1:
        raise ShapeError("optvq_assign needs at least one feature", Z.shape)
    plan = sinkhorn(pairwise_sq_distances(Z, book.codes), cfg or SinkhornConfig())
    indices = plan.argmax()
    if record:
        book.record(indices)
    return Assignment(indices, plan_diag=plan.plan[np.arange(len(indices)), indices].copy())


def assign(Z: np.ndarray, book: Codebook, cfg: QuantizerConfig, record: bool = True) -> Assignment:
    if cfg.kind == "nearest":
        return nn_assign(Z, book, record=record)
    return optvq_assign(Z, book, cfg.sinkhorn, record=record)


def gather_codes(book: Codebook, assignment: Assignment) -> np.ndarray:
    indices = np.asarray(assignment.indices)
    assert indices.size == 0 or (indices.min() >= 0 and indices.max() < book.size), "code index out of range"
    return book.codes[indices].copy()


def ste_combine(z_e: np.ndarray, z_q: np.ndarray) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """Straight-through combination ``z_e + sg(z_q - z_e)``.

    Returns the forward value and the gradient rule mapping an upstream gradient
    to the gradient at ``z_e`` (identity). The ``z_q`` path receives nothing.
    """
    z_e = as_matrix(z_e)
    z_q = as_matrix(z_q)
    if z_e.shape != z_q.shape:
        raise ShapeError("STE operands differ in shape", z_e.shape, z_q.shape)
    # z_e + (z_q - z_e) rounds; the exact forward value is z_q.
    forward = z_q.copy()

    def grad_rule(upstream: np.ndarray) -> np.ndarray:
        return np.asarray(upstream, dtype=np.float64)

    return forward, grad_rule


def commitment_loss(
    z_e: np.ndarray, z_q: np.ndarray, beta: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """``||sg(z_e) - z_q||^2 + beta * ||z_e - sg(z_q)||^2`` averaged over rows.

    Returns the loss, the gradient at ``z_e`` and the per-row gradient at ``z_q``
    (to be scattered into the assigned code rows).
    """
    z_e = as_matrix(z_e)
    z_q = as_matrix(z_q)
    if z_e.shape != z_q.shape:
        raise ShapeError("Commitment operands differ in shape", z_e.shape, z_q.shape)
    rows = z_e.shape[0]
    diff = z_e - z_q
    sq = float(np.sum(diff * diff)) / rows
    loss = sq + beta * sq
    grad_ze = 2.0 * beta * diff / rows
    grad_zq = -2.0 * diff / rows
    return loss, grad_ze, grad_zq


def scatter_code_grads(book: Codebook, assignment: Assignment, grad_zq: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(book.codes)
    np.add.at(grad, assignment.indices, grad_zq)
    return grad


def split_heads(Z: np.ndarray, heads: int) -> list[np.ndarray]:
    Z = as_matrix(Z)
    if Z.shape[1] % heads:
        raise ShapeError(f"Feature dimension is not divisible by {heads} heads", Z.shape)
    width = Z.shape[1] // heads
    return [Z[:, s * width : (s + 1) * width] for s in range(heads)]


def multihead_quantize(
    Z: np.ndarray,
    books: Sequence[Codebook],
    cfg: QuantizerConfig,
    record: bool = True,
    indices: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Quantize each of the B feature segments with its own codebook, then concatenate.

    A frozen ``indices`` table (l x B) replays a previous assignment instead of
    solving a new one; usage counters are left alone in that case.
    """
    segments = split_heads(Z, len(books))
    if indices is None:
        indices = np.stack([assign(seg, book, cfg, record=record).indices for seg, book in zip(segments, books)], axis=1)
    elif indices.shape != (len(segments[0]), len(books)):
        raise ShapeError("Frozen index table must be (tokens x heads)", indices.shape, (len(segments[0]), len(books)))
    quantized = [gather_codes(book, Assignment(indices[:, s])) for s, book in enumerate(books)]
    return np.concatenate(quantized, axis=1), indices


def usage_stats(assignments: Iterable[int] | np.ndarray, n: int) -> UsageStats:
    if n < 1:
        raise ValueError(f"Codebook size must be >= 1, got {n}.")
    indices = np.asarray(list(assignments) if not isinstance(assignments, np.ndarray) else assignments)
    histogram = np.bincount(indices.ravel().astype(np.int64), minlength=n)
    total = histogram.sum()
    if total == 0:
        return UsageStats(0.0, histogram, 1.0)
    probs = histogram[histogram > 0] / total
    entropy = -float(np.sum(probs * np.log(probs)))
    return UsageStats(np.count_nonzero(histogram) / n, histogram, float(np.exp(entropy)))


def effective_codebook_size(n: int, heads: int) -> int:
    return n**heads


def sgd_feature_update(z: np.ndarray, c: np.ndarray, gamma: float) -> np.ndarray:
    """One commitment-style step ``z + gamma * (c - z)`` toward the assigned code."""
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}.")
    z = np.asarray(z, dtype=np.float64)
    return z + gamma * (np.asarray(c, dtype=np.float64) - z)
