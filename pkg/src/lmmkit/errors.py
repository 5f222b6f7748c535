"""Exception types shared across the package."""


class LmmError(Exception):
    """Base class for all package errors."""


class FormulaError(LmmError):
    """Syntax or grammar error in a model formula.

    Carries the byte offset of the offending token in ``offset``.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(LmmError):
    """Malformed input data (missing columns, NA handling, level problems)."""


class CsvError(LmmError):
    """Structurally invalid CSV input (ragged rows, bad header, empty file)."""


class ModelError(LmmError):
    """Ill-posed model specification or dimension mismatch."""


class PlsError(LmmError):
    """Failure inside a penalized-least-squares evaluation."""


class NotPositiveDefiniteError(PlsError):
    """Cholesky pivot failure; ``column`` is the offending (original) index."""

    def __init__(self, column):
        super().__init__(f"matrix not positive definite at column {column}")
        self.column = column
