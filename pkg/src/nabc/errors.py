"""Exception hierarchy.

Domain errors (bad matrices, degenerate samples) derive from
:class:`NabcError`; configuration and I/O problems derive from
:class:`ConfigError`. The CLI maps the first family to exit code 1 and the
second to exit code 2.
"""

from __future__ import annotations


class NabcError(Exception):
    """Base class for domain errors."""


class ConfigError(Exception):
    """Invalid configuration, missing input, or unreadable file."""


class NotPositiveDefinite(NabcError):
    """Cholesky pivot at or below tolerance.

    Attributes
    ----------
    cell : tuple of int or None
        1-based ``(i, i)`` position of the failing pivot.
    pivot : float or None
        Value of the failing pivot before the square root.
    """

    def __init__(self, message: str = "matrix is not positive definite", cell=None, pivot=None):
        if cell is not None:
            message = f"{message} (pivot {pivot:.3e} at cell {cell})"
        super().__init__(message)
        self.cell = cell
        self.pivot = pivot


class DegenerateSine(NabcError):
    """Cumulative sine product underflowed while extracting angles."""


class InvalidPermutation(NabcError):
    pass


class DimensionMismatch(NabcError):
    pass


class MeasureMismatch(NabcError):
    pass


class ConvergenceFailure(NabcError):
    """A numerical routine failed to converge."""


class NoConvergence(ConvergenceFailure):
    pass


class DomainError(NabcError):
    """Argument outside the domain of a special function or law."""


class InvalidK(NabcError):
    """Angle-law exponent would be below 1."""


class ConstantSeries(NabcError):
    pass


class AllTied(NabcError):
    pass


class NoExceedances(NabcError):
    pass


class TooFewExceedances(NabcError):
    pass


class OutOfRange(NabcError):
    pass


class CellEstimationFailure(NabcError):
    """A dependence measure failed on one cell of a replicate."""

    def __init__(self, message: str, cell=None):
        if cell is not None:
            message = f"cell {cell}: {message}"
        super().__init__(message)
        self.cell = cell


class NonPDReplicate(NabcError):
    """Too many simulated replicates produced non-PD matrices."""


class DegenerateDifference(NabcError):
    pass


class ZeroPValue(NabcError):
    pass


class InvalidSpec(NabcError):
    pass
