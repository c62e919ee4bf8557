"""Exception hierarchy.

Validation problems subclass ``ValueError`` and numerical breakdowns subclass
``RuntimeError`` so callers that do not care about the distinction can still
catch the builtin types.
"""


class ExtremoError(Exception):
    pass


class ValidationError(ExtremoError, ValueError):
    """Bad input: wrong dimensions, parameters outside their box, malformed files."""


class FieldFormatError(ValidationError):
    pass


class SingularLagError(ValidationError):
    """Closed form evaluated at a lag with zero dependence where it has no limit."""


class UndefinedEstimateError(ValidationError):
    """Extremogram with an empty denominator or an empty lag closure."""


class NumericalError(ExtremoError, RuntimeError):
    """Factorisation failure, runaway simulation loop and similar."""


class PartialFailureError(ExtremoError, RuntimeError):
    """Too many replicates or subsampling blocks had to be dropped."""

    def __init__(self, message, n_failed=0, n_total=0):
        super().__init__(message)
        self.n_failed = n_failed
        self.n_total = n_total
