"""Exception hierarchy shared by all stages.

The CLI maps :class:`ValidationError` subclasses to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class SpatialCoxError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(SpatialCoxError, ValueError):
    """Input data or configuration failed validation."""


class InvalidArgumentError(ValidationError):
    pass


class DegenerateDataError(ValidationError):
    """Data are well formed but carry no information (e.g. zero events)."""


class GraphError(ValidationError):
    pass


class SchemaError(ValidationError):
    """A persisted artifact is malformed or has an unexpected schema version."""


class NumericalError(SpatialCoxError, ArithmeticError):
    """A factorization or density evaluation failed."""


class AllSitesExcludedError(NumericalError):
    pass
