class NowcastError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(NowcastError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ValidationError(NowcastError, ValueError):
    pass


class DomainError(NowcastError, ValueError):
    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)


class ShapeError(NowcastError, ValueError):
    pass


class InsufficientDataError(NowcastError, ValueError):
    pass


class DegenerateError(NowcastError, ArithmeticError):
    pass


class TrainingError(NowcastError, RuntimeError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
