"""Exception hierarchy shared across the package."""


class LowRamError(Exception):
    """Base class for all errors raised by lowram."""


class ParameterError(LowRamError, ValueError):
    """A numeric parameter is outside its allowed domain."""


class DomainError(LowRamError, ValueError):
    """An input value is not finite or otherwise not roundable."""


class PrecisionError(LowRamError, ValueError):
    """A value is not an exact multiple of the grid resolution."""


class GridRangeError(LowRamError, ValueError):
    """A value (or set of coefficients) exceeds the representable range."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = list(indices) if indices is not None else []


class ConfigError(LowRamError, ValueError):
    """An invalid combination of training options."""


class ParseError(LowRamError, ValueError):
    """A malformed libsvm line."""

    def __init__(self, message, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.column = column
        self.reason = message


class FormatError(LowRamError, ValueError):
    """A corrupt or truncated model file."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class VersionError(FormatError):
    """A model file written with an unknown format version."""


class UndefinedAUCError(LowRamError, ValueError):
    """AUC requested for a sample containing only one class."""


class ComparatorError(LowRamError, RuntimeError):
    """The comparator solver failed to reach its tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
