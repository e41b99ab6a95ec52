"""Ground-state accuracy versus non-stabilizerness benchmarks for the transverse-field Ising chain."""
from .core import PauliString, PauliTerm, TfimModel, expectation_of_terms, tfim_terms
from .errors import (
    CapabilityError,
    ConfigError,
    ContractViolation,
    ConvergenceError,
    DimensionError,
    InvalidModelError,
    MagicBenchError,
    NumericalError,
)
from .exact import ExactSolver, solve_ed
from .magic import StabilizerEntropy, infidelity, m2_fast, m2_naive, stabilizer_entropy

__version__ = "0.1.0"

__all__ = [
    "CapabilityError",
    "ConfigError",
    "ContractViolation",
    "ConvergenceError",
    "DimensionError",
    "ExactSolver",
    "InvalidModelError",
    "MagicBenchError",
    "NumericalError",
    "PauliString",
    "PauliTerm",
    "StabilizerEntropy",
    "TfimModel",
    "expectation_of_terms",
    "infidelity",
    "m2_fast",
    "m2_naive",
    "solve_ed",
    "stabilizer_entropy",
    "tfim_terms",
]
