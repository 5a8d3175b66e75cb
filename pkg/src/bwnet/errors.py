"""Exception types shared across the engine.

The CLI maps these onto its exit-code taxonomy: configuration problems
exit 2, numerical failures exit 3, model/file format violations exit 4.
"""


class BwnError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(BwnError, ValueError):
    """Array shapes or extents are incompatible with an operation."""


class DomainError(BwnError, ValueError):
    """A value lies outside the domain an operation accepts."""


class NumericsError(BwnError, ArithmeticError):
    """Non-finite values or numerical divergence."""


class ConfigError(BwnError, ValueError):
    """A run configuration is malformed or self-contradictory."""


class FormatError(BwnError, ValueError):
    """A serialized file violates its declared format."""


class DataError(BwnError, KeyError):
    """A referenced record (utterance, trial) is missing or unusable."""

    def __str__(self) -> str:  # KeyError quotes its message; keep it readable
        return self.args[0] if self.args else ""
