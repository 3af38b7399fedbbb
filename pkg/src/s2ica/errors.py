"""Exception hierarchy shared across the package."""


class S2ICAError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(S2ICAError, ValueError):
    pass


class EmptyInputError(S2ICAError, ValueError):
    pass


class ConfigurationError(S2ICAError, ValueError):
    pass


class SpecificationError(ConfigurationError):
    pass


class LabelError(S2ICAError, IndexError):
    pass


class StateError(S2ICAError, RuntimeError):
    pass


class TrainingError(S2ICAError, RuntimeError):
    pass


class GenerationError(S2ICAError, RuntimeError):
    pass


class FormatError(S2ICAError, ValueError):
    """Malformed or unsupported file contents.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
