"""Exception hierarchy shared across the package."""


class PermLMError(Exception):
    """Base class for expected, user-facing failures."""


class ShapeError(PermLMError, ValueError):
    pass


class ParameterError(PermLMError, ValueError):
    pass


class DataError(PermLMError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelError(DataError):
    def __init__(self, raw, line=None):
        self.raw = raw
        self.line = line
        message = f"unknown label {raw!r}"
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonFiniteError(PermLMError, FloatingPointError):
    """Raised when NaN or Inf shows up where only finite values are allowed."""


class VocabMismatchError(DataError):
    pass
