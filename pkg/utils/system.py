"""Host capability helpers recorded alongside run summaries."""
from __future__ import annotations

import platform
from dataclasses import asdict, dataclass

import numpy as np
import psutil


@dataclass
class HardwareInfo:
    cpu_count: int
    memory_gb: float
    platform: str
    numpy_version: str

    def to_dict(self) -> dict:
        return asdict(self)


def detect_hardware() -> HardwareInfo:
    return HardwareInfo(
        cpu_count=psutil.cpu_count(logical=True) or 1,
        memory_gb=round(psutil.virtual_memory().total / 2**30, 2),
        platform=platform.platform(),
        numpy_version=np.__version__,
    )


def peak_memory_mb() -> float:
    return psutil.Process().memory_info().rss / 2**20
