"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid or unsatisfiable configuration (e.g. arena too crowded to place objects)."""


class ShapeError(ValueError):
    """Array argument has the wrong length or dimensionality."""


class InsufficientDataError(ValueError):
    """Not enough data to run a fit."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class PropagationError(RuntimeError):
    """A model rollout produced a non-finite state."""
