"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor/array dimensions do not line up."""


class ConfigurationError(ValueError):
    """Invalid configuration value or combination."""


class CapacityError(ValueError):
    """Requested sequence length exceeds a configured limit."""


class VocabularyError(KeyError):
    """Token not present in the label vocabulary."""


class DataError(ValueError):
    """Dataset violates a precondition (empty, missing class, ...)."""


class SchemaError(ValueError):
    """A record in a dataset file does not match the expected schema."""


class ParseError(ValueError):
    """A dataset file is malformed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; last good checkpoint is kept."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
