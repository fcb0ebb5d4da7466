"""Exception hierarchy shared by the library and the CLI."""


class WhiteoutError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(WhiteoutError, ValueError):
    pass


class MissingParameterError(InvalidArgumentError):
    pass


class SchemaError(WhiteoutError, ValueError):
    """A config file or CSV header does not match the expected layout."""


class DataError(WhiteoutError, ValueError):
    """Malformed, empty or degenerate input data."""


class DivergenceError(WhiteoutError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class GenerationError(WhiteoutError, RuntimeError):
    """The data simulator could not satisfy its acceptance rule."""
