"""Patch-wise MLP autoencoder with hand-derived backpropagation.

Images of shape (batch, side, side, channels) are cut into non-overlapping
p x p patches, giving m = (side / p)^2 latent tokens per image. Encoder:
linear -> ReLU -> linear to the latent dimension. Decoder mirrors it and ends
in a sigmoid so reconstructions stay in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from models.config import QuantizerConfig
from processing.numerics import as_matrix
from processing.quantizer import (
    Assignment,
    Codebook,
    commitment_loss,
    multihead_quantize,
    scatter_code_grads,
    split_heads,
    ste_combine,
)
from utils.errors import ShapeError

PARAM_NAMES = ("enc_w1", "enc_b1", "enc_w2", "enc_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2")
L1_WEIGHT = 1.0
L2_WEIGHT = 1.0


@dataclass
class PatchAutoencoder:
    patch_size: int
    side: int
    channels: int
    hidden: int
    latent: int
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.side % self.patch_size:
            raise ShapeError(f"Image side {self.side} is not divisible by patch size {self.patch_size}")
        if not self.params:
            self.params = {
                name: np.zeros(shape, dtype=np.float64) for name, shape in self.param_shapes().items()
            }

    @property
    def grid(self) -> int:
        return self.side // self.patch_size

    @property
    def tokens_per_image(self) -> int:
        return self.grid**2

    @property
    def patch_dim(self) -> int:
        return self.patch_size**2 * self.channels

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "enc_w1": (self.patch_dim, self.hidden),
            "enc_b1": (self.hidden,),
            "enc_w2": (self.hidden, self.latent),
            "enc_b2": (self.latent,),
            "dec_w1": (self.latent, self.hidden),
            "dec_b1": (self.hidden,),
            "dec_w2": (self.hidden, self.patch_dim),
            "dec_b2": (self.patch_dim,),
        }


@dataclass
class LossBreakdown:
    l1: float
    l2: float
    commit: float

    @property
    def total(self) -> float:
        return L1_WEIGHT * self.l1 + L2_WEIGHT * self.l2 + self.commit


@dataclass
class ForwardPass:
    losses: LossBreakdown
    indices: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    cache: dict[str, np.ndarray]


@dataclass
class Gradients:
    params: dict[str, np.ndarray]
    codebooks: list[np.ndarray]


def init_autoencoder(
    rng: np.random.Generator,
    patch_size: int = 8,
    side: int = 32,
    channels: int = 1,
    hidden: int = 128,
    latent: int = 8,
) -> PatchAutoencoder:
    model = PatchAutoencoder(patch_size, side, channels, hidden, latent)
    for name, shape in model.param_shapes().items():
        if name.endswith(("_b1", "_b2")):
            continue
        bound = np.sqrt(6.0 / shape[0])
        model.params[name] = rng.uniform(-bound, bound, size=shape)
    return model


def _check_images(model: PatchAutoencoder, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[..., None]
    if x.ndim != 4 or x.shape[1:] != (model.side, model.side, model.channels):
        raise ShapeError(
            f"Expected images of shape (batch, {model.side}, {model.side}, {model.channels})", x.shape
        )
    return x


def patchify(model: PatchAutoencoder, x: np.ndarray) -> np.ndarray:
    x = _check_images(model, x)
    b, g, p, ch = x.shape[0], model.grid, model.patch_size, model.channels
    return x.reshape(b, g, p, g, p, ch).transpose(0, 1, 3, 2, 4, 5).reshape(b * g * g, p * p * ch)


def unpatchify(model: PatchAutoencoder, patches: np.ndarray) -> np.ndarray:
    g, p, ch = model.grid, model.patch_size, model.channels
    b = patches.shape[0] // model.tokens_per_image
    return patches.reshape(b, g, g, p, p, ch).transpose(0, 1, 3, 2, 4, 5).reshape(b, g * p, g * p, ch)


def _encode(model: PatchAutoencoder, x: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    P = model.params
    patches = patchify(model, x)
    a1 = patches @ P["enc_w1"] + P["enc_b1"]
    h1 = np.maximum(a1, 0.0)
    z_e = h1 @ P["enc_w2"] + P["enc_b2"]
    return z_e, {"patches": patches, "a1": a1, "h1": h1}


def _decode(model: PatchAutoencoder, z: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    z = as_matrix(z)
    if z.shape[1] != model.latent or z.shape[0] % model.tokens_per_image:
        raise ShapeError(
            f"Latent rows must be a multiple of {model.tokens_per_image} with {model.latent} columns",
            z.shape,
        )
    P = model.params
    a3 = z @ P["dec_w1"] + P["dec_b1"]
    h3 = np.maximum(a3, 0.0)
    out = expit(h3 @ P["dec_w2"] + P["dec_b2"])
    return unpatchify(model, out), {"z_in": z, "a3": a3, "h3": h3, "out": out}


def encode(model: PatchAutoencoder, x: np.ndarray) -> np.ndarray:
    return _encode(model, x)[0]


def decode(model: PatchAutoencoder, z_q: np.ndarray) -> np.ndarray:
    return _decode(model, z_q)[0]


def reconstruction_losses(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, float]:
    diff = x_hat - x
    return float(np.mean(np.abs(diff))), float(np.mean(diff * diff))


def forward_loss(
    model: PatchAutoencoder,
    codebooks: Sequence[Codebook],
    cfg: QuantizerConfig,
    x: np.ndarray,
    indices: np.ndarray | None = None,
    record: bool = True,
) -> ForwardPass:
    """Composite objective: L1 + L2 reconstruction plus the commitment loss.

    Passing ``indices`` freezes the assignment (used by gradient checks).
    """
    x = _check_images(model, x)
    z_e, enc_cache = _encode(model, x)
    z_q, indices = multihead_quantize(z_e, codebooks, cfg, record=record, indices=indices)
    z_st, _ = ste_combine(z_e, z_q)
    x_hat, dec_cache = _decode(model, z_st)
    l1, l2 = reconstruction_losses(x, x_hat)
    commit, _, _ = commitment_loss(z_e, z_q, cfg.beta)
    cache = {**enc_cache, **dec_cache, "z_e": z_e, "z_q": z_q}
    return ForwardPass(LossBreakdown(l1, l2, commit), indices, x, x_hat, cache)


def backward(
    model: PatchAutoencoder,
    codebooks: Sequence[Codebook],
    cfg: QuantizerConfig,
    x: np.ndarray,
    forward: ForwardPass | None = None,
) -> Gradients:
    """Gradients of ``forward_loss`` with the straight-through quantizer."""
    if forward is None:
        forward = forward_loss(model, codebooks, cfg, x, record=False)
    P, c = model.params, forward.cache
    count = forward.x.size

    diff = forward.x_hat - forward.x
    # np.sign(0) == 0: the L1 subgradient at exact zeros.
    d_xhat = L1_WEIGHT * np.sign(diff) / count + L2_WEIGHT * 2.0 * diff / count
    d_out = patchify(model, d_xhat)
    out = c["out"]
    d_a4 = d_out * out * (1.0 - out)
    grads = {
        "dec_w2": c["h3"].T @ d_a4,
        "dec_b2": d_a4.sum(axis=0),
    }
    d_a3 = (d_a4 @ P["dec_w2"].T) * (c["a3"] > 0)
    grads["dec_w1"] = c["z_in"].T @ d_a3
    grads["dec_b1"] = d_a3.sum(axis=0)
    d_zst = d_a3 @ P["dec_w1"].T

    _, grad_rule = ste_combine(c["z_e"], c["z_q"])
    _, commit_ze, commit_zq = commitment_loss(c["z_e"], c["z_q"], cfg.beta)
    d_ze = grad_rule(d_zst) + commit_ze

    grads["enc_w2"] = c["h1"].T @ d_ze
    grads["enc_b2"] = d_ze.sum(axis=0)
    d_a1 = (d_ze @ P["enc_w2"].T) * (c["a1"] > 0)
    grads["enc_w1"] = c["patches"].T @ d_a1
    grads["enc_b1"] = d_a1.sum(axis=0)

    code_grads = [
        scatter_code_grads(book, Assignment(forward.indices[:, s]), seg)
        for s, (book, seg) in enumerate(zip(codebooks, split_heads(commit_zq, len(codebooks))))
    ]
    return Gradients({name: grads[name] for name in PARAM_NAMES}, code_grads)
