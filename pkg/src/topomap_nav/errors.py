"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument value or shape."""


class StateError(RuntimeError):
    """Operation is not valid in the current state (e.g. agent on a wall)."""


class NumericError(ArithmeticError):
    """Non-finite values met during a numerical update."""


class TrainingError(RuntimeError):
    """Training diverged."""


class ConfigurationError(ValueError):
    """An experiment is missing a component it requires."""
