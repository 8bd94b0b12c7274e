"""Exception types. CLI exit codes are attached to each class."""


class TTStackError(Exception):
    exit_code = 1


class ConfigError(TTStackError, ValueError):
    exit_code = 2


class CorpusError(TTStackError, ValueError):
    """Malformed corpus layout, undecodable image or unusable class counts."""

    exit_code = 3


class NumericalError(TTStackError, ArithmeticError):
    exit_code = 4
