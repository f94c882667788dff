"""Binary checkpoint codec (``OVQ1``).

Layout, all integers little-endian u32:
    magic "OVQ1" | version | tensor count
    per tensor: name length | UTF-8 name | ndim | dims... | float64 LE payload (row-major)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from models.autoencoder import PARAM_NAMES, PatchAutoencoder
from models.optim import OptimState
from processing.pipeline import TrainingState
from processing.quantizer import Codebook
from utils.errors import (
    BadMagicError,
    CheckpointError,
    MalformedCheckpointError,
    MissingTensorError,
    ShapeError,
    TruncatedCheckpointError,
    VersionMismatchError,
)

MAGIC = b"OVQ1"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


def state_to_tensors(state: TrainingState) -> dict[str, np.ndarray]:
    model = state.model
    tensors = {
        "meta.model": np.array(
            [model.patch_size, model.side, model.channels, model.hidden, model.latent], dtype=np.float64
        ),
        "meta.step": np.array([state.step], dtype=np.float64),
    }
    for name in PARAM_NAMES:
        tensors[f"model.{name}"] = model.params[name]
    for s, book in enumerate(state.codebooks):
        tensors[f"codebook.{s}.codes"] = book.codes
        tensors[f"codebook.{s}.usage"] = book.usage.astype(np.float64)
    optim = state.optim
    tensors["adam.hparams"] = np.array([optim.lr, optim.beta1, optim.beta2, optim.eps, optim.step], dtype=np.float64)
    for name in sorted(optim.m):
        tensors[f"adam.m.{name}"] = optim.m[name]
        tensors[f"adam.v.{name}"] = optim.v[name]
    return tensors


def _require(tensors: dict[str, np.ndarray], name: str, size: int | None = None) -> np.ndarray:
    if name not in tensors:
        raise MissingTensorError(f"Checkpoint has no tensor '{name}'.")
    value = tensors[name]
    if size is not None and value.size != size:
        raise MalformedCheckpointError(f"Tensor '{name}' has {value.size} values, expected {size}.")
    return value


def tensors_to_state(tensors: dict[str, np.ndarray]) -> TrainingState:
    patch_size, side, channels, hidden, latent = (int(v) for v in _require(tensors, "meta.model", 5))
    params = {name: _require(tensors, f"model.{name}") for name in PARAM_NAMES}
    try:
        model = PatchAutoencoder(patch_size, side, channels, hidden, latent, params)
    except ShapeError as exc:
        raise MalformedCheckpointError(f"Checkpoint model does not fit its own header: {exc}") from exc
    for name, shape in model.param_shapes().items():
        if params[name].shape != shape:
            raise MalformedCheckpointError(f"Tensor 'model.{name}' has shape {params[name].shape}, expected {shape}.")
    codebooks = []
    s = 0
    while f"codebook.{s}.codes" in tensors:
        codebooks.append(Codebook(tensors[f"codebook.{s}.codes"], _require(tensors, f"codebook.{s}.usage").astype(np.int64)))
        s += 1
    lr, beta1, beta2, eps, step = _require(tensors, "adam.hparams", 5)
    optim = OptimState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=int(step))
    for key, value in tensors.items():
        if key.startswith("adam.m."):
            optim.m[key[len("adam.m.") :]] = value
        elif key.startswith("adam.v."):
            optim.v[key[len("adam.v.") :]] = value
    return TrainingState(model, codebooks, optim, int(_require(tensors, "meta.step", 1)[0]))


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(tensors))]
    for name, value in tensors.items():
        value = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks += [_U32.pack(len(encoded)), encoded, _U32.pack(value.ndim)]
        chunks += [_U32.pack(dim) for dim in value.shape]
        chunks.append(value.tobytes(order="C"))
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes, path: Path):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise TruncatedCheckpointError(
                f"{self.path}: truncated checkpoint, needed {end} bytes but file has {len(self.payload)}."
            )
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def decode_tensors(payload: bytes, path: Path | str = "<memory>") -> dict[str, np.ndarray]:
    reader = _Reader(payload, Path(path))
    if len(payload) < len(MAGIC) or payload[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {payload[:4]!r}, expected {MAGIC!r}.")
    reader.take(len(MAGIC))
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, this build reads {FORMAT_VERSION}.")
    tensors = {}
    for _ in range(reader.u32()):
        raw = reader.take(reader.u32())
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedCheckpointError(f"{path}: tensor name {raw!r} is not UTF-8.") from exc
        if name in tensors:
            raise MalformedCheckpointError(f"{path}: duplicate tensor '{name}'.")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(payload):
        raise MalformedCheckpointError(f"{path}: {len(payload) - reader.offset} trailing bytes after the last tensor.")
    return tensors


def save_checkpoint(path: Path | str, state: TrainingState) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensors(state_to_tensors(state)))
    return path


def load_checkpoint(path: Path | str) -> TrainingState:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    return tensors_to_state(decode_tensors(path.read_bytes(), path))
