"""MNIST file resolution and download."""
from __future__ import annotations

import logging
from pathlib import Path

import requests

from utils.errors import DataError

logger = logging.getLogger(__name__)

MNIST_MIRROR = "https://storage.googleapis.com/cvdf-datasets/mnist/"
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _existing(target_dir: Path, stem: str) -> Path | None:
    for candidate in (target_dir / stem, target_dir / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    return None


def download_file(url: str, target_path: Path, timeout: float = 60.0) -> Path:
    logger.info("Downloading %s", url)
    try:
        with requests.get(url, stream=True, timeout=timeout) as response:
            response.raise_for_status()
            partial = target_path.with_suffix(target_path.suffix + ".part")
            with partial.open("wb") as handle:
                for chunk in response.iter_content(chunk_size=1 << 16):
                    handle.write(chunk)
            partial.replace(target_path)
    except requests.RequestException as exc:
        raise DataError(f"Download failed for {url}: {exc}") from exc
    return target_path


def ensure_mnist_files(target_dir: Path, download: bool = False) -> dict[str, Path]:
    """Locate the four IDX files (raw or gzipped), fetching missing ones when allowed."""
    target_dir = Path(target_dir)
    resolved = {}
    for key, stem in MNIST_FILES.items():
        path = _existing(target_dir, stem)
        if path is None:
            if not download:
                raise DataError(
                    f"MNIST file {stem}[.gz] not found in {target_dir}; set download=true to fetch it."
                )
            target_dir.mkdir(parents=True, exist_ok=True)
            path = download_file(f"{MNIST_MIRROR}{stem}.gz", target_dir / f"{stem}.gz")
        resolved[key] = path
    return resolved
