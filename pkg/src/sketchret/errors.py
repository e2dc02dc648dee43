"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: ValidationError (and subclasses) -> 1,
FormatError / OSError -> 2, NumericalError -> 3.
"""


class ValidationError(ValueError):
    """Bad arguments, inconsistent configuration, or invalid input data."""


class DimensionError(ValidationError):
    """Operand shapes do not conform."""


class ContractError(ValidationError):
    """An API precondition was violated (wrong root, missing key, wrong dtype)."""


class DataError(ValidationError):
    """Dataset-level inconsistency (bad split, missing category, empty pool)."""


class FormatError(RuntimeError):
    """A binary or text file does not follow its declared layout."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or failed a numerical check."""
