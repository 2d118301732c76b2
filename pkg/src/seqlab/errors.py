"""Exception hierarchy shared by the library and the CLI."""


class SeqlabError(Exception):
    """Base class for all errors raised by seqlab."""


class InvalidInputError(SeqlabError, ValueError):
    """Dimension or length mismatch, out-of-range index, non-finite weights."""


class FormatError(SeqlabError):
    """Malformed data or model file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class TrainingDiverged(SeqlabError, ArithmeticError):
    """A trainer produced non-finite parameters (lower the learning rate)."""


class CalibrationFailed(SeqlabError):
    """Every learning-rate candidate diverged."""


class ConfigError(SeqlabError, ValueError):
    """Invalid run configuration (unknown algorithm, non-positive lambda, ...)."""
