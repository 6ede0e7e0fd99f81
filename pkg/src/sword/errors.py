"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class SwordError(Exception):
    exit_code = 1


class InvalidArgument(SwordError, ValueError):
    """Bad input value or inconsistent shapes."""

    exit_code = 2


class ConfigError(SwordError):
    exit_code = 2


class FormatError(SwordError, ValueError):
    """A binary or text file does not match the expected layout."""

    exit_code = 4


class DivergenceError(SwordError, FloatingPointError):
    exit_code = 3

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class TrainingDiverged(DivergenceError):
    pass


class SamplerDiverged(DivergenceError):
    pass
