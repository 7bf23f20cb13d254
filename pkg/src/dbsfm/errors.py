"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates an operation's preconditions (shape, range, finiteness)."""


class AlignmentError(ValidationError):
    """Label timestamps cannot be matched to signal window starts."""


class ConfigError(ValueError):
    """Bad configuration file or option (unknown key, invalid value)."""


class DataFormatError(ValueError):
    """On-disk dataset or file format is malformed."""


class CheckpointFormatError(DataFormatError):
    """Checkpoint file has a bad magic string, header, or payload."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite arithmetic was required."""


class GraphStateError(RuntimeError):
    """Backward pass requested without a recorded forward computation."""


class UndefinedCorrelationError(ValueError):
    """Pearson correlation is undefined (constant input)."""
