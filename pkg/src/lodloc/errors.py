"""Exception types shared across the package.

The CLI maps these onto exit codes: ParseError -> 2, ValidationError -> 3,
NumericalError -> 4.
"""


class LodlocError(Exception):
    """Base class for package errors."""


class ParseError(LodlocError):
    """A file could not be read or parsed."""


class ValidationError(LodlocError):
    """An input violates a documented precondition or invariant."""


class NumericalError(LodlocError):
    """A numerical operation failed (singular system, degenerate input)."""
