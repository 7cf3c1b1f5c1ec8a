"""Exception hierarchy shared by all modules."""


class ArealEpiError(Exception):
    """Base class for package errors."""


class DataValidationError(ArealEpiError, ValueError):
    """Input data violates a structural or value constraint."""


class UnknownRegion(DataValidationError):
    pass


class SelfLoop(DataValidationError):
    pass


class NegativeCount(DataValidationError):
    pass


class MissingCell(DataValidationError):
    pass


class NonConsecutiveDates(DataValidationError):
    pass


class DimensionMismatch(ArealEpiError, ValueError):
    pass


class NonFiniteInput(ArealEpiError, ValueError):
    pass


class NonFiniteGradient(ArealEpiError, FloatingPointError):
    pass


class NonFiniteStep(ArealEpiError, FloatingPointError):
    pass


class ZeroVariance(ArealEpiError, ValueError):
    pass


class SingularInformation(ArealEpiError, ArithmeticError):
    pass


class NotConverged(ArealEpiError):
    """Raised only on request; fit() normally returns with ``converged=False``."""


class SchemaMismatch(ArealEpiError, ValueError):
    pass


class ExplosionGuard(ArealEpiError, OverflowError):
    """A simulated mean exceeded the configured cap."""

    def __init__(self, region, day, mu, cap):
        self.region = region
        self.day = day
        self.mu = mu
        self.cap = cap
        super().__init__(
            f"mean {mu:.4g} exceeds cap {cap:.4g} at region {region!r}, day {day}"
        )
