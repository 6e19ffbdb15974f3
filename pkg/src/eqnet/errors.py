"""Exception hierarchy shared by every eqnet module."""


class EQNetError(Exception):
    """Base class for all errors raised by eqnet."""


class InvalidSpecError(EQNetError, ValueError):
    """A quantization spec or elastic space is malformed."""


class ShapeError(EQNetError, ValueError):
    pass


class InputError(EQNetError, ValueError):
    """Invalid runtime input (bad label index, empty data, ...)."""


class ContractError(EQNetError, RuntimeError):
    """A documented precondition of an operation was violated."""


class LookupSpecError(EQNetError, KeyError):
    """A subnet spec refers to a configuration outside the elastic space."""


class BuildError(EQNetError, ValueError):
    pass


class EmptySpaceError(InvalidSpecError, BuildError):
    """An elastic space axis has no entries; nothing can be built from it."""


class EncodingError(EQNetError, ValueError):
    pass


class InfeasibleConstraintError(EQNetError, RuntimeError):
    pass


class FormatError(EQNetError, ValueError):
    """A file on disk does not match its declared binary or text format."""


class ConfigError(EQNetError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IncompatibleCheckpointError(EQNetError, RuntimeError):
    pass


class UndefinedMetricError(EQNetError, ValueError):
    """Correlation requested on a zero-variance vector."""


class DegenerateInputWarning(UserWarning):
    pass
