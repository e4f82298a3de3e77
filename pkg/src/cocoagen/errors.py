"""Exception hierarchy shared by all modules.

Everything that represents bad user input derives from ``ValidationError`` so
the CLI can map it to a single exit code.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Input rejected before any computation."""


class InvalidInputError(ValidationError):
    """Non-finite entries, mismatched dimensions, bad shapes."""


class InvalidPartitionError(ValidationError):
    """Partition sizes do not add up to the model dimension."""


class PreconditionError(ValidationError):
    """A documented precondition of an operation does not hold."""


class InsufficientDataError(ValidationError):
    """Not enough rows available to draw the requested sample."""


class NoNonzeroSingularValueError(ValidationError):
    """Matrix has no singular value above the rank cutoff."""


class FormatError(ValidationError):
    """Malformed binary or text input."""
