"""Exception types shared across the library."""


class RoughmalError(Exception):
    """Base class for all library errors."""


class DomainError(RoughmalError, ValueError):
    """An argument lies outside its mathematical domain."""


class ModelError(RoughmalError, ValueError):
    """A model object is inconsistent (non-PSD covariance, failed derivative validation, ...)."""


class RegularityError(RoughmalError, ValueError):
    """A pairing was requested outside the complementary-regularity regime."""


class NumericalError(RoughmalError, RuntimeError):
    """A numerical procedure failed to converge or blew up."""
