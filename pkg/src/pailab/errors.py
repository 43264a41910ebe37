"""Exception hierarchy.

Each family maps to one CLI exit code (see ``pailab.cli``).
"""


class PaiLabError(Exception):
    exit_code = 1


class ConfigError(PaiLabError, ValueError):
    exit_code = 2


class MonotonicityError(ConfigError):
    """A refinement asked for more survivors than the current mask has."""


class InterfaceError(ConfigError):
    """Inputs do not satisfy a model's declared interface (e.g. feature mode)."""


class MergeError(ConfigError):
    pass


class ParseError(PaiLabError):
    exit_code = 3


class WrongMagicError(ParseError):
    pass


class TruncatedFileError(ParseError):
    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class CountMismatchError(ParseError):
    pass


class VersionError(ParseError):
    pass


class KindMismatchError(ParseError):
    pass


class NumericError(PaiLabError, ArithmeticError):
    exit_code = 4


class NumericOverflowError(NumericError):
    def __init__(self, layer):
        super().__init__(f"non-finite activations in layer {layer}")
        self.layer = layer


class TrainingDivergedError(NumericError):
    def __init__(self, epoch, what="loss"):
        super().__init__(f"training diverged (non-finite {what}) at epoch {epoch}")
        self.epoch = epoch


class StorageError(PaiLabError, OSError):
    exit_code = 5
