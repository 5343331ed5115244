"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """A call-time parameter is out of its valid range."""


class NumericError(ArithmeticError):
    """A numerical routine failed (non-convergence, NaN loss)."""


class FormatError(ValueError):
    """A file on disk is malformed, truncated or fails its checksum."""


class ConfigError(ValueError):
    """A run configuration is invalid.

    ``path`` is the JSON path of the offending entry, when known.
    """

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class StratificationError(ValueError):
    """A class has no samples in a probe training split."""


class DegenerateTestError(ValueError):
    """A statistical test has no information (e.g. zero discordant pairs)."""
