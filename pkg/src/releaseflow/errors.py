"""Shared exception base classes."""


class ReleaseflowError(Exception):
    """Base class for all releaseflow errors."""


class ValidationError(ReleaseflowError):
    """Raised when an input value or file violates a documented invariant."""
