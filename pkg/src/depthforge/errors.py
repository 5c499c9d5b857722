"""Exception types shared across the package."""


class DepthForgeError(Exception):
    """Base class for everything this package raises on purpose."""


class DomainError(DepthForgeError, ValueError):
    """An input lies outside the domain an operation is defined on."""


class DegenerateSampleError(DomainError):
    """Affine normalization hit a (near-)constant map; callers skip the sample."""


class ConfigError(DepthForgeError, ValueError):
    """Malformed configuration content, unknown keys, or a bad environment knob."""


class PfmError(DepthForgeError, ValueError):
    """A PFM file could not be parsed. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
