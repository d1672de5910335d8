"""Exception types raised across the package."""


class DinoError(Exception):
    """Base class for all package errors."""


class ConfigError(DinoError, ValueError):
    """A configuration value violates an invariant or cannot be parsed."""


class UsageError(DinoError, RuntimeError):
    """An operation was called in a state that does not allow it."""


class ShapeError(DinoError, ValueError):
    def __init__(self, expected, got):
        super().__init__(f"shape mismatch: expected {tuple(expected)}, got {tuple(got)}")
        self.expected = tuple(expected)
        self.got = tuple(got)


class FormatError(DinoError, ValueError):
    """A binary file is malformed. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


class NumericFault(DinoError, FloatingPointError):
    def __init__(self, layer: str, what: str = "gradient"):
        super().__init__(f"non-finite {what} in layer {layer!r}")
        self.layer = layer


class InsufficientDataError(DinoError, ValueError):
    pass
