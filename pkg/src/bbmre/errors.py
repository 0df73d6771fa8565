"""Exception hierarchy shared by every module of the package."""


class BBMREError(Exception):
    """Base class for all package errors."""


class ConfigError(BBMREError, ValueError):
    """Invalid configuration or input; ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DomainError(BBMREError, ValueError):
    """An argument lies outside the domain of the operation."""


class RegimeError(DomainError):
    """gamma(lambda) is not representable above (m-1)*es for this lambda."""


class AssumptionViolation(BBMREError):
    """A model assumption (e.g., the velocity condition H2) fails."""


class NumericalInstabilityError(BBMREError, ArithmeticError):
    """A computed profile left its a-priori band."""

    def __init__(self, message, worst_x=None):
        self.worst_x = worst_x
        super().__init__(message)


class ExtensionError(BBMREError):
    """A lookup table could not be extended to cover the requested range."""


class CappedRunError(BBMREError):
    """Particle population exceeded the configured cap.

    ``partial`` holds the snapshots completed before the cap was hit.
    """

    def __init__(self, message, partial=None):
        self.partial = partial if partial is not None else []
        super().__init__(message)


class SampleSizeError(BBMREError, ValueError):
    """Not enough samples for the requested statistic."""
