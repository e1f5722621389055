"""Exception hierarchy shared by the workbench modules.

The CLI maps :class:`InputError` subclasses to exit code 2 and
:class:`DomainError` subclasses to exit code 1.
"""
from __future__ import annotations


class LaaError(Exception):
    """Base class for all workbench errors."""


class InputError(LaaError, ValueError):
    """Bad input: malformed files, invalid arguments or configuration."""


class DomainError(LaaError, RuntimeError):
    """A computation that could not complete (non-convergence, divergence)."""


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TopologyError(InputError):
    pass


class MappingError(InputError):
    pass


class ConfigError(InputError):
    pass


class ShapeError(InputError):
    pass


class StratificationError(InputError):
    pass


class LoopError(DomainError):
    def __init__(self, message: str, hour: int):
        self.hour = hour
        super().__init__(f"hour {hour}: {message}")


class ScenarioError(DomainError):
    def __init__(self, message: str, seed: int, day_index: int):
        self.seed = seed
        self.day_index = day_index
        super().__init__(f"scenario (seed={seed}, day={day_index}): {message}")


class NumericError(DomainError):
    def __init__(self, tensor: str):
        self.tensor = tensor
        super().__init__(f"non-finite values in {tensor}")


class TrainingError(DomainError):
    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")
