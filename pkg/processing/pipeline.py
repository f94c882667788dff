"""Training and evaluation pipeline for the quantized autoencoder."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import psutil

from models.autoencoder import PARAM_NAMES, PatchAutoencoder, backward, forward_loss, init_autoencoder
from models.config import QuantizerConfig, StepMetrics, TrainConfig, TrainStatus
from models.optim import OptimState, adam_step
from processing.numerics import psnr, seeded_rng
from processing.quantizer import Codebook, UsageStats, init_codebook, usage_stats
from utils.data_utils import ImageDataset, batch_iter
from utils.errors import NumericalError

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "l1", "l2", "commit", "total", "usage_frac", "perplexity")


@dataclass
class TrainingState:
    model: PatchAutoencoder
    codebooks: list[Codebook]
    optim: OptimState
    step: int = 0

    def parameters(self) -> dict[str, np.ndarray]:
        params = dict(self.model.params)
        for s, book in enumerate(self.codebooks):
            params[f"codebook.{s}"] = book.codes
        return params

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        self.model.params = {name: params[name] for name in PARAM_NAMES}
        for s, book in enumerate(self.codebooks):
            book.codes = params[f"codebook.{s}"]


@dataclass
class TrainReport:
    metrics: list[StepMetrics] = field(default_factory=list)
    state: TrainingState | None = None
    cancelled: bool = False

    def series(self, name: str) -> list[float]:
        return [getattr(row, name) for row in self.metrics]


@dataclass
class EvalResult:
    psnr: float
    l_rec: float
    usage: UsageStats
    images: int


def init_training_state(config: TrainConfig, side: int, channels: int) -> TrainingState:
    config.check_image_side(side)
    rng = seeded_rng(config.seed)
    model = init_autoencoder(
        rng,
        patch_size=config.patch_size,
        side=side,
        channels=channels,
        hidden=config.hidden_dim,
        latent=config.latent_dim,
    )
    heads = config.quantizer.heads
    codebooks = [init_codebook(config.codebook_size, config.latent_dim // heads, rng) for _ in range(heads)]
    return TrainingState(model, codebooks, OptimState(lr=config.lr))


def head_offsets(indices: np.ndarray, n: int) -> np.ndarray:
    """Map an (l x B) index table onto one flat range of n * B codes."""
    return indices + n * np.arange(indices.shape[1])


class TrainingWorker:
    def __init__(
        self,
        config: TrainConfig,
        dataset: ImageDataset,
        progress: Callable[[TrainStatus], None] | None = None,
        state: TrainingState | None = None,
    ):
        self.config = config
        self.dataset = dataset
        self.progress = progress
        self.state = state or init_training_state(config, dataset.side, dataset.channels)
        self._cancelled = False

    def cancel(self) -> None:
        self._cancelled = True

    def run(self) -> TrainReport:
        report = TrainReport(state=self.state)
        steps_per_epoch = -(-len(self.dataset) // self.config.batch_size)
        total_steps = steps_per_epoch * self.config.epochs
        logger.info(
            "Training %s quantizer: %d images, %d steps, n=%d, d=%d, heads=%d",
            self.config.quantizer.kind,
            len(self.dataset),
            total_steps,
            self.config.codebook_size,
            self.config.latent_dim,
            self.config.quantizer.heads,
        )
        start = time.time()
        done = 0
        for epoch in range(self.config.epochs):
            for batch in batch_iter(self.dataset, self.config.batch_size, seed=self.config.seed + epoch):
                if self._cancelled:
                    logger.warning("Training cancelled at step %d.", self.state.step)
                    report.cancelled = True
                    return report
                row = self._train_step(batch)
                report.metrics.append(row)
                done += 1
                if self.progress is not None:
                    elapsed = time.time() - start
                    rate = done / elapsed if elapsed > 0 else 0.1
                    self.progress(
                        TrainStatus(
                            current_step=done,
                            total_steps=total_steps,
                            eta_seconds=(total_steps - done) / max(rate, 0.1),
                            usage_percent=self._resource_usage(),
                            message=f"Epoch {epoch + 1}/{self.config.epochs}, total loss {row.total:.4f}",
                        )
                    )
                if row.step % self.config.log_every == 0:
                    logger.info(
                        "step %d  total %.5f  l1 %.5f  l2 %.5f  commit %.5f  usage %.2f%%",
                        row.step,
                        row.total,
                        row.l1,
                        row.l2,
                        row.commit,
                        100.0 * row.usage_frac,
                    )
        return report

    def _train_step(self, batch: np.ndarray) -> StepMetrics:
        state, qcfg = self.state, self.config.quantizer
        fp = forward_loss(state.model, state.codebooks, qcfg, batch)
        losses = fp.losses
        if not np.isfinite(losses.total):
            raise NumericalError(f"Non-finite loss at step {state.step + 1}: {losses}.")
        grads = backward(state.model, state.codebooks, qcfg, batch, fp)
        all_grads = dict(grads.params)
        for s, grad in enumerate(grads.codebooks):
            all_grads[f"codebook.{s}"] = grad
        state.load_parameters(adam_step(state.parameters(), all_grads, state.optim))
        state.step += 1
        usage = usage_stats(head_offsets(fp.indices, self.config.codebook_size), self.config.codebook_size * qcfg.heads)
        return StepMetrics(
            step=state.step,
            l1=losses.l1,
            l2=losses.l2,
            commit=losses.commit,
            total=losses.total,
            usage_frac=usage.fraction_used,
            perplexity=usage.perplexity,
        )

    def _resource_usage(self) -> float:
        return float(psutil.cpu_percent(interval=0.0))


def train(
    config: TrainConfig,
    dataset: ImageDataset,
    progress: Callable[[TrainStatus], None] | None = None,
) -> TrainReport:
    return TrainingWorker(config, dataset, progress).run()


def evaluate(
    state: TrainingState, qcfg: QuantizerConfig, dataset: ImageDataset, batch_size: int = 64
) -> EvalResult:
    """Held-out pass; leaves parameters and usage counters untouched."""
    n = state.codebooks[0].size
    histogram = np.zeros(n * len(state.codebooks), dtype=np.int64)
    scores, rec = [], []
    for batch in batch_iter(dataset, batch_size, shuffle=False):
        fp = forward_loss(state.model, state.codebooks, qcfg, batch, record=False)
        histogram += np.bincount(head_offsets(fp.indices, n).ravel(), minlength=histogram.size)
        scores.extend(psnr(x, x_hat, peak=1.0) for x, x_hat in zip(fp.x, fp.x_hat))
        rec.append((fp.losses.l1 + fp.losses.l2) * len(batch))
    usage = usage_stats(np.repeat(np.arange(histogram.size), histogram), histogram.size)
    return EvalResult(
        psnr=float(np.mean(scores)),
        l_rec=float(np.sum(rec) / len(dataset)),
        usage=usage,
        images=len(dataset),
    )
