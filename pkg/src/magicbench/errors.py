"""Exception types raised across magicbench."""


class MagicBenchError(Exception):
    """Base class for all magicbench errors."""


class DimensionError(MagicBenchError, ValueError):
    """Operands disagree on qubit count or vector length."""


class ContractViolation(MagicBenchError, ValueError):
    """An input breaks a documented precondition (e.g. unnormalized state)."""


class InvalidModelError(MagicBenchError, ValueError):
    pass


class ConfigError(MagicBenchError, ValueError):
    pass


class CapabilityError(MagicBenchError):
    """The requested size is beyond what this code path supports."""


class NumericalError(MagicBenchError, ArithmeticError):
    """A computed quantity left its mathematically allowed range."""


class ConvergenceError(MagicBenchError, RuntimeError):
    """An iterative routine failed to converge or diverged."""
