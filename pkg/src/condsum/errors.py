"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, data and
validation problems exit 2, numerical failures exit 3.
"""


class CondsumError(Exception):
    """Base class for all toolkit errors."""


class DataLoadError(CondsumError):
    """A referenced file is missing or unreadable."""


class ValidationError(CondsumError):
    """Loaded data violates a declared invariant (range, length, shape)."""


class StateError(CondsumError):
    """An operation was invoked before its prerequisites exist
    (e.g. evaluation without a trained checkpoint)."""


class NumericalError(CondsumError):
    """A computation produced a non-finite value."""
