"""Input checks shared by the estimators and the functional API."""
from __future__ import annotations

import numpy as np

from .core import NORM_ATOL, TfimModel, is_normalized, n_qubits_of
from .errors import ContractViolation, DimensionError, InvalidModelError


def check_statevector(psi, n: int | None = None, normalized: bool = False) -> np.ndarray:
    """Return ``psi`` as a 1-d complex array after shape/normalization checks."""
    arr = np.asarray(psi)
    if arr.ndim != 1:
        raise DimensionError(f"statevector must be 1-d, got shape {arr.shape}")
    arr = arr.astype(complex, copy=False)
    m = n_qubits_of(arr)
    if n is not None and m != n:
        raise DimensionError(f"expected {n} qubits, got {m}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("statevector has non-finite amplitudes")
    if normalized and not is_normalized(arr, NORM_ATOL):
        raise ContractViolation(
            f"statevector norm^2 = {np.vdot(arr, arr).real!r}, expected 1"
        )
    return arr


def check_same_size(psi: np.ndarray, phi: np.ndarray) -> None:
    if psi.shape != phi.shape:
        raise DimensionError(f"size mismatch: {psi.shape} vs {phi.shape}")


def check_model(model) -> TfimModel:
    """Accept a :class:`TfimModel` or a mapping with its fields."""
    if isinstance(model, TfimModel):
        model.validate()
        return model
    if isinstance(model, dict):
        return TfimModel(**model)
    raise InvalidModelError(f"cannot interpret {type(model).__name__} as a TFIM model")


def check_positive(name: str, value, strict: bool = True) -> None:
    if value is None or not np.isfinite(value) or (value <= 0 if strict else value < 0):
        raise ValueError(f"{name} must be {'>' if strict else '>='} 0, got {value!r}")
