"""Exception types shared across the package."""


class Confnet2SeqError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(Confnet2SeqError):
    """Input text does not follow the expected grammar."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StructuralError(ParseError):
    """Input parses token-wise but violates a structural rule
    (duplicate or missing align index, record/count mismatch)."""


class DegenerateBinError(Confnet2SeqError):
    """A bin whose posteriors sum to zero cannot be normalized."""


class ShapeError(Confnet2SeqError):
    """Tensor shapes do not conform for the requested operation."""


class NumericError(Confnet2SeqError):
    """Non-finite values where finite ones are required."""


class ContractError(Confnet2SeqError):
    """A caller violated an operation's precondition."""


class DataError(Confnet2SeqError):
    """Corpus or manifest content is unusable."""


class FormatError(Confnet2SeqError):
    """A data file violates its declared format."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DivergenceError(Confnet2SeqError):
    """Training produced a non-finite loss or gradient."""


class CompatibilityError(Confnet2SeqError):
    """A checkpoint does not match the requested configuration."""
