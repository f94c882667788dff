"""Dataset generation and ingestion: 2-D point clouds, MNIST IDX files, batching."""
from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import cv2
import numpy as np

from models.config import RunConfig
from processing.numerics import seeded_rng
from utils.dataset_manager import ensure_mnist_files
from utils.errors import ConfigError, DataError, IdxFormatError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
PADDED_SIDE = 32


@dataclass(frozen=True)
class GaussianComponent:
    mean: tuple[float, float]
    cov: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    weight: float = 1.0


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple[GaussianComponent, ...]

    @classmethod
    def single(cls, mean, cov) -> "MixtureSpec":
        return cls((GaussianComponent(tuple(mean), tuple(map(tuple, cov))),))


@dataclass
class PointCloud2D:
    points: np.ndarray
    seed: int
    spec: MixtureSpec


@dataclass
class ImageDataset:
    images: np.ndarray
    split: str
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        if len(self.images) == 0:
            raise DataError(f"Dataset split '{self.split}' is empty.")
        if not np.all(np.isfinite(self.images)) or self.images.min() < 0 or self.images.max() > 1:
            raise DataError(f"Dataset split '{self.split}' has pixels outside [0, 1].")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def side(self) -> int:
        return self.images.shape[1]

    @property
    def channels(self) -> int:
        return self.images.shape[3]

    def subset(self, count: int) -> "ImageDataset":
        labels = None if self.labels is None else self.labels[:count]
        return ImageDataset(self.images[:count], self.split, labels)


def _component_factor(component: GaussianComponent) -> np.ndarray:
    cov = np.asarray(component.cov, dtype=np.float64)
    if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
        raise ValueError(f"Covariance must be a symmetric 2x2 matrix, got {cov.tolist()}.")
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals.min() < -1e-12:
        raise ValueError(f"Covariance is not positive semi-definite: eigenvalues {eigvals.tolist()}.")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def gen_gaussian_mixture(spec: MixtureSpec, count: int, seed: int) -> PointCloud2D:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}.")
    factors = [_component_factor(c) for c in spec.components]
    rng = seeded_rng(seed)
    weights = np.array([c.weight for c in spec.components], dtype=np.float64)
    labels = rng.choice(len(spec.components), size=count, p=weights / weights.sum())
    noise = rng.standard_normal((count, 2))
    means = np.array([c.mean for c in spec.components], dtype=np.float64)
    points = np.empty((count, 2), dtype=np.float64)
    for k, factor in enumerate(factors):
        mask = labels == k
        points[mask] = means[k] + noise[mask] @ factor.T
    return PointCloud2D(points, seed, spec)


DATA_CLOUD = MixtureSpec(
    (
        GaussianComponent((-1.0, 0.0), ((0.5, 0.0), (0.0, 0.5))),
        GaussianComponent((1.0, 0.5), ((0.5, 0.0), (0.0, 0.5))),
    )
)
CODE_CLOUD = MixtureSpec.single((2.5, 2.5), ((0.25, 0.0), (0.0, 0.25)))


def mismatched_clouds(seed: int, points: int = 100, codes: int = 25) -> tuple[PointCloud2D, PointCloud2D]:
    """Data cloud and a displaced, tighter code cloud drawn from the same seed family."""
    return gen_gaussian_mixture(DATA_CLOUD, points, seed), gen_gaussian_mixture(CODE_CLOUD, codes, seed + 1)


def _open_idx(path: Path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"IDX file not found: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else path.open("rb")


def _read_idx(path: Path, magic: int, dims: int) -> np.ndarray:
    with _open_idx(path) as handle:
        payload = handle.read()
    header_size = 4 * (2 + dims)
    if len(payload) < header_size:
        raise IdxFormatError(f"{path}: truncated header ({len(payload)} bytes).")
    found, count, *shape = struct.unpack(f">{2 + dims}I", payload[:header_size])
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic {found}, expected {magic}.")
    expected = count * int(np.prod(shape, dtype=np.int64))
    body = payload[header_size:]
    if len(body) < expected:
        raise IdxFormatError(f"{path}: truncated payload, header promises {expected} bytes, found {len(body)}.")
    if len(body) > expected:
        raise IdxFormatError(f"{path}: {len(body) - expected} trailing bytes after the payload.")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, *shape)


def pad_images(images: np.ndarray, side: int = PADDED_SIDE) -> np.ndarray:
    """Zero-pad each image to ``side`` x ``side``, centred."""
    rows, cols = images.shape[1:3]
    if rows > side or cols > side:
        raise DataError(f"Cannot pad {rows}x{cols} images to {side}x{side}.")
    top, left = (side - rows) // 2, (side - cols) // 2
    bottom, right = side - rows - top, side - cols - left
    return np.stack(
        [cv2.copyMakeBorder(img, top, bottom, left, right, cv2.BORDER_CONSTANT, value=0) for img in images]
    )


def load_mnist_idx(images_path: Path, labels_path: Path, split: str = "train") -> ImageDataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, dims=2)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, dims=0)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"Image/label count mismatch: {images_path} has {len(images)}, {labels_path} has {len(labels)}."
        )
    pixels = pad_images(images.astype(np.float64) / 255.0)
    logger.info("Loaded %d MNIST images from %s", len(pixels), images_path)
    return ImageDataset(pixels[..., None], split, labels.astype(np.int64))


def gen_synthetic_images(count: int, seed: int, side: int = PADDED_SIDE, split: str = "train") -> ImageDataset:
    """Soft gaussian blobs on a dark background, one to three per image."""
    rng = seeded_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    images = np.zeros((count, side, side), dtype=np.float64)
    for i in range(count):
        for _ in range(rng.integers(1, 4)):
            cy, cx = rng.uniform(4, side - 4, size=2)
            radius = rng.uniform(2.0, 6.0)
            images[i] += rng.uniform(0.5, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))
    return ImageDataset(np.clip(images, 0.0, 1.0), split)


def load_dataset(config: RunConfig, split: str) -> ImageDataset:
    count = config.train_subset if split == "train" else config.val_subset
    if config.dataset == "synthetic":
        return gen_synthetic_images(count, config.seed + (0 if split == "train" else 1), split=split)
    if config.dataset == "mnist":
        files = ensure_mnist_files(Path(config.data_dir), config.download)
        prefix = "train" if split == "train" else "test"
        dataset = load_mnist_idx(files[f"{prefix}_images"], files[f"{prefix}_labels"], split)
        return dataset.subset(count)
    raise ConfigError(f"Unknown dataset '{config.dataset}'.")


def batch_iter(
    data: ImageDataset | np.ndarray | Sequence, batch_size: int, seed: int = 0, shuffle: bool = True
) -> Iterator[np.ndarray]:
    """Yield every item exactly once; the final short batch is emitted as-is."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}.")
    items = data.images if isinstance(data, ImageDataset) else np.asarray(data)
    order = seeded_rng(seed).permutation(len(items)) if shuffle else np.arange(len(items))
    for start in range(0, len(items), batch_size):
        yield items[order[start : start + batch_size]]
