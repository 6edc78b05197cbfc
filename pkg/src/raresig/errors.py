"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/arity problems exit
with 2, data that is structurally unusable for the requested test
(empty classes, zero variance, too few included controls) exits with 3.
"""


class RaresigError(Exception):
    """Base class for all package errors."""


class ValidationError(RaresigError, ValueError):
    """Bad arguments, kernel arity mismatch, or an infeasible request."""


class DegenerateDataError(RaresigError, ValueError):
    """Data cannot support the requested computation."""
