"""Exception types raised across the package."""


class SliceCdfError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(SliceCdfError, ValueError):
    pass


class DimensionMismatchError(SliceCdfError, ValueError):
    pass


class DomainError(SliceCdfError, ValueError):
    pass


class InvalidCovarianceError(SliceCdfError, ValueError):
    pass


class DegenerateDistributionError(SliceCdfError, ValueError):
    pass


class MalformedInputError(SliceCdfError, ValueError):
    """Input file or payload could not be parsed into the expected structure."""


class ConfigError(SliceCdfError, ValueError):
    """Experiment configuration is missing a field or holds an invalid value."""


class RolloutDivergenceError(SliceCdfError, RuntimeError):
    """A rollout produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"rollout diverged: non-finite state at step {step}")
