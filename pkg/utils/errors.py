"""Error hierarchy and the CLI exit-code table."""
from __future__ import annotations


class OptVQError(RuntimeError):
    exit_code = 1


class ConfigError(OptVQError):
    exit_code = 2


class DataError(OptVQError):
    exit_code = 3


class NumericalError(OptVQError):
    exit_code = 4


class ShapeError(ValueError):
    """Operand shapes are incompatible."""

    def __init__(self, message: str, *shapes: tuple[int, ...]):
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)
        self.shapes = shapes


class NonConvergenceError(NumericalError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"Sinkhorn did not converge after {iterations} iterations (last residual {residual:.3e})."
        )
        self.residual = residual
        self.iterations = iterations


class IdxFormatError(DataError):
    pass


class CheckpointError(DataError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class MalformedCheckpointError(CheckpointError):
    pass


class MissingTensorError(CheckpointError):
    pass
