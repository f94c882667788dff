import gzip
import struct

import numpy as np
import pytest

from models.config import RunConfig
from utils.data_utils import (
    CODE_CLOUD,
    DATA_CLOUD,
    GaussianComponent,
    ImageDataset,
    MixtureSpec,
    batch_iter,
    gen_gaussian_mixture,
    gen_synthetic_images,
    load_dataset,
    load_mnist_idx,
    mismatched_clouds,
    pad_images,
)
from utils.errors import DataError, IdxFormatError


def idx_images(count, rows=28, cols=28, magic=2051, seed=0):
    pixels = np.random.default_rng(seed).integers(0, 256, size=(count, rows, cols), dtype=np.uint8)
    return struct.pack(">4I", magic, count, rows, cols) + pixels.tobytes(), pixels


def idx_labels(count, magic=2049):
    return struct.pack(">2I", magic, count) + bytes(i % 10 for i in range(count))


@pytest.fixture
def idx_pair(tmp_path):
    payload, pixels = idx_images(5)
    images = tmp_path / "images-idx3-ubyte"
    labels = tmp_path / "labels-idx1-ubyte"
    images.write_bytes(payload)
    labels.write_bytes(idx_labels(5))
    return images, labels, pixels


class TestIdx:
    def test_loads_and_pads(self, idx_pair):
        images, labels, pixels = idx_pair
        dataset = load_mnist_idx(images, labels)
        assert dataset.images.shape == (5, 32, 32, 1)
        assert dataset.labels.tolist() == [0, 1, 2, 3, 4]
        np.testing.assert_allclose(dataset.images[:, 2:30, 2:30, 0], pixels / 255.0)
        assert not dataset.images[:, :2].any() and not dataset.images[:, 30:].any()
        assert not dataset.images[:, :, :2].any() and not dataset.images[:, :, 30:].any()

    def test_gzip_files(self, tmp_path, idx_pair):
        images, labels, _ = idx_pair
        gz_images = tmp_path / "images.gz"
        gz_labels = tmp_path / "labels.gz"
        gz_images.write_bytes(gzip.compress(images.read_bytes()))
        gz_labels.write_bytes(gzip.compress(labels.read_bytes()))
        np.testing.assert_array_equal(
            load_mnist_idx(gz_images, gz_labels).images, load_mnist_idx(images, labels).images
        )

    def test_bad_magic(self, tmp_path, idx_pair):
        _, labels, _ = idx_pair
        bad = tmp_path / "bad"
        bad.write_bytes(idx_images(5, magic=2049)[0])
        with pytest.raises(IdxFormatError, match="magic"):
            load_mnist_idx(bad, labels)

    def test_truncated_payload(self, tmp_path, idx_pair):
        images, labels, _ = idx_pair
        short = tmp_path / "short"
        short.write_bytes(images.read_bytes()[:-10])
        with pytest.raises(IdxFormatError, match="truncated"):
            load_mnist_idx(short, labels)

    def test_trailing_bytes(self, tmp_path, idx_pair):
        images, labels, _ = idx_pair
        labels.write_bytes(labels.read_bytes() + b"\x00\x00")
        with pytest.raises(IdxFormatError, match="2 trailing bytes"):
            load_mnist_idx(images, labels)

    def test_truncated_header(self, tmp_path, idx_pair):
        _, labels, _ = idx_pair
        short = tmp_path / "short"
        short.write_bytes(b"\x00\x00\x08")
        with pytest.raises(IdxFormatError):
            load_mnist_idx(short, labels)

    def test_count_mismatch(self, tmp_path, idx_pair):
        images, _, _ = idx_pair
        labels = tmp_path / "labels"
        labels.write_bytes(idx_labels(4))
        with pytest.raises(IdxFormatError, match="mismatch"):
            load_mnist_idx(images, labels)

    def test_missing_file(self, tmp_path, idx_pair):
        _, labels, _ = idx_pair
        with pytest.raises(DataError):
            load_mnist_idx(tmp_path / "nope", labels)

    def test_idx_errors_are_data_errors(self):
        assert issubclass(IdxFormatError, DataError)
        assert IdxFormatError("x").exit_code == 3


def test_pad_rejects_oversized():
    with pytest.raises(DataError):
        pad_images(np.zeros((1, 33, 33)))


class TestMixtures:
    def test_reproducible(self):
        a = gen_gaussian_mixture(DATA_CLOUD, 50, seed=3)
        b = gen_gaussian_mixture(DATA_CLOUD, 50, seed=3)
        assert np.array_equal(a.points, b.points)

    def test_single_component_moments(self):
        spec = MixtureSpec.single((2.0, -1.0), ((1.0, 0.3), (0.3, 0.5)))
        cloud = gen_gaussian_mixture(spec, 20_000, seed=1)
        np.testing.assert_allclose(cloud.points.mean(axis=0), [2.0, -1.0], atol=0.03)
        np.testing.assert_allclose(np.cov(cloud.points.T), [[1.0, 0.3], [0.3, 0.5]], atol=0.05)

    def test_degenerate_covariance_collapses(self):
        spec = MixtureSpec.single((1.0, 1.0), ((0.0, 0.0), (0.0, 0.0)))
        assert np.all(gen_gaussian_mixture(spec, 10, seed=0).points == 1.0)

    def test_invalid_covariance(self):
        spec = MixtureSpec((GaussianComponent((0.0, 0.0), ((1.0, 2.0), (2.0, 1.0))),))
        with pytest.raises(ValueError):
            gen_gaussian_mixture(spec, 5, seed=0)

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            gen_gaussian_mixture(CODE_CLOUD, 0, seed=0)

    def test_mismatched_clouds_are_separated(self):
        data, codes = mismatched_clouds(0)
        assert data.points.shape == (100, 2) and codes.points.shape == (25, 2)
        assert np.linalg.norm(codes.points.mean(axis=0) - [2.5, 2.5]) < 0.5
        assert codes.seed == data.seed + 1


class TestImages:
    def test_synthetic_images_in_range(self):
        dataset = gen_synthetic_images(6, seed=2)
        assert dataset.images.shape == (6, 32, 32, 1)
        assert dataset.images.min() >= 0 and dataset.images.max() <= 1
        assert np.array_equal(dataset.images, gen_synthetic_images(6, seed=2).images)

    def test_dataset_validation(self):
        with pytest.raises(DataError):
            ImageDataset(np.zeros((0, 4, 4, 1)), "train")
        with pytest.raises(DataError):
            ImageDataset(np.full((1, 4, 4, 1), 1.5), "train")

    def test_load_synthetic_splits_differ(self):
        config = RunConfig(dataset="synthetic", train_subset=4, val_subset=3)
        train_set, val_set = load_dataset(config, "train"), load_dataset(config, "val")
        assert (len(train_set), len(val_set)) == (4, 3)
        assert not np.array_equal(train_set.images[:3], val_set.images)

    def test_load_mnist_without_files(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(RunConfig(dataset="mnist", data_dir=str(tmp_path)), "train")


class TestBatches:
    def test_short_final_batch(self):
        batches = list(batch_iter(np.arange(10), 3, shuffle=False))
        assert [len(b) for b in batches] == [3, 3, 3, 1]
        assert np.concatenate(batches).tolist() == list(range(10))

    def test_shuffled_epoch_covers_every_item(self):
        batches = list(batch_iter(np.arange(10), 4, seed=5))
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))
        again = list(batch_iter(np.arange(10), 4, seed=5))
        assert all(np.array_equal(a, b) for a, b in zip(batches, again))

    def test_dataset_input(self):
        dataset = gen_synthetic_images(5, seed=0)
        assert [b.shape[0] for b in batch_iter(dataset, 2)] == [2, 2, 1]

    def test_invalid_batch_size(self):
        with pytest.raises(ValueError):
            list(batch_iter(np.arange(3), 0))
