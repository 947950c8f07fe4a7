"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/contract problems exit 2,
I/O problems exit 3, non-finite numerics exit 4.
"""


class UnimpError(Exception):
    """Base class for all package errors."""


class StructureError(UnimpError):
    """Malformed input file (ragged CSV rows, bad checkpoint header, ...)."""


class EmptyInputError(UnimpError):
    """Input contains no data rows."""


class SchemaError(UnimpError):
    """Declared schema does not match the data."""


class ParameterError(UnimpError):
    """A parameter is outside its documented domain."""


class ShapeError(UnimpError):
    """Tensor or matrix shapes are incompatible."""


class ContractError(UnimpError):
    """An operation precondition was violated by the caller."""


class CodecError(UnimpError):
    """A categorical value or id cannot be decoded."""


class UnscalableColumnError(UnimpError):
    """A numerical column has no observed cells to fit a scaler on."""


class MetricError(UnimpError):
    """A metric is undefined for the given inputs (e.g. zero masked cells)."""


class NonFiniteError(UnimpError):
    """A gradient or loss became NaN/inf during optimization."""
