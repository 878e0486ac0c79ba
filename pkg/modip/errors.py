"""Exceptions raised by the reconstruction toolkit.

The CLI maps ``ConfigError`` to exit code 1 and every other ``ModipError``
(plus ``OSError``) to exit code 2.
"""


class ModipError(Exception):
    pass


class ConfigError(ModipError, ValueError):
    """A configuration or input violates a documented constraint"""


class GridMismatchError(ConfigError):
    def __init__(self, what: str, left, right):
        super().__init__(f"{what}: grid mismatch {left} != {right}")


class DivisibilityError(ConfigError):
    pass


class NumericalError(ModipError, ArithmeticError):
    """Non-finite data or a broken operator chain"""


class DivergenceError(ModipError, RuntimeError):
    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"Reconstruction diverged at iteration {iteration} (loss={loss})")


class VolumeFormatError(ModipError, OSError):
    pass


class StaleCacheError(ModipError):
    pass
