"""Pauli algebra, computational-basis statevectors and TFIM term lists.

Conventions used everywhere in the package:

* Statevectors are plain complex numpy arrays of length ``2**n``.
  Indices are little-endian: qubit ``j`` is bit ``j`` of the basis index.
* A clear bit means spin ``+1`` (the ``+1`` eigenstate of ``Z``), a set bit
  means spin ``-1``.  ``|0...0>`` is therefore the all-up configuration.
* A :class:`PauliString` with masks ``(x, z)`` is the Hermitian operator
  ``i**popcount(x & z) * X(x) @ Z(z)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DimensionError, InvalidModelError

MAX_QUBITS = 16
NORM_ATOL = 1e-10

_I_POWERS = np.array([1, 1j, -1, -1j], dtype=complex)


class EmptyTermsWarning(UserWarning):
    pass


def popcount(x):
    """Number of set bits, elementwise for integer arrays."""
    if isinstance(x, (int, np.integer)):
        return int(x).bit_count()
    return np.bitwise_count(np.asarray(x, dtype=np.int64)).astype(np.int64)


def n_qubits_of(psi: np.ndarray) -> int:
    dim = psi.shape[-1]
    n = dim.bit_length() - 1
    if dim < 1 or 1 << n != dim:
        raise DimensionError(f"statevector length {dim} is not a power of two")
    return n


def spins(bits, n: int) -> np.ndarray:
    """Spin values (+1/-1) of basis configurations, shape ``(..., n)``."""
    bits = np.asarray(bits, dtype=np.int64)
    shifts = np.arange(n, dtype=np.int64)
    return 1 - 2 * ((bits[..., None] >> shifts) & 1)


def bits_from_spins(sigma) -> np.ndarray:
    sigma = np.asarray(sigma)
    n = sigma.shape[-1]
    weights = 1 << np.arange(n, dtype=np.int64)
    return ((sigma < 0).astype(np.int64) * weights).sum(axis=-1)


def basis_state(n: int, bits: int = 0) -> np.ndarray:
    if not 0 <= bits < 1 << n:
        raise DimensionError(f"bits={bits} out of range for n={n}")
    psi = np.zeros(1 << n, dtype=complex)
    psi[bits] = 1.0
    return psi


def plus_state(n: int) -> np.ndarray:
    return np.full(1 << n, 2.0 ** (-n / 2), dtype=complex)


def random_state(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random pure state."""
    psi = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return psi / np.linalg.norm(psi)


def is_normalized(psi: np.ndarray, atol: float = NORM_ATOL) -> bool:
    return abs(np.vdot(psi, psi).real - 1.0) <= atol


@dataclass(frozen=True)
class PauliString:
    """An ``n``-qubit Pauli operator ``i**|x&z| X(x) Z(z)``."""

    x_mask: int
    z_mask: int
    n: int

    def __post_init__(self):
        if not 1 <= self.n <= MAX_QUBITS:
            raise DimensionError(f"n={self.n} outside [1, {MAX_QUBITS}]")
        limit = 1 << self.n
        if not (0 <= self.x_mask < limit and 0 <= self.z_mask < limit):
            raise DimensionError("mask does not fit in n bits")

    @classmethod
    def from_label(cls, label: str) -> PauliString:
        """Build from a label like ``"XIZY"``; character ``j`` acts on qubit ``j``."""
        x = z = 0
        for j, ch in enumerate(label.upper()):
            if ch in "XY":
                x |= 1 << j
            if ch in "ZY":
                z |= 1 << j
            if ch not in "IXYZ":
                raise ValueError(f"bad Pauli character {ch!r}")
        return cls(x, z, len(label))

    @property
    def label(self) -> str:
        chars = []
        for j in range(self.n):
            xb, zb = (self.x_mask >> j) & 1, (self.z_mask >> j) & 1
            chars.append("IXZY"[xb + 2 * zb])
        return "".join(chars)

    @property
    def phase(self) -> complex:
        return _I_POWERS[popcount(self.x_mask & self.z_mask) % 4]

    @property
    def weight(self) -> int:
        return popcount(self.x_mask | self.z_mask)

    def matrix(self) -> np.ndarray:
        """Dense ``2**n x 2**n`` matrix; intended for tests on small n."""
        dim = 1 << self.n
        out = np.zeros((dim, dim), dtype=complex)
        for s in range(dim):
            out[:, s] = apply_pauli(self, basis_state(self.n, s))
        return out


@dataclass(frozen=True)
class PauliTerm:
    op: PauliString
    coefficient: float

    def __post_init__(self):
        if not np.isfinite(self.coefficient):
            raise ValueError("term coefficient must be finite")


@dataclass(frozen=True)
class TfimModel:
    """``H = J sum_i Z_i Z_{i+1} - h sum_i X_i``."""

    n: int
    J: float = -1.0
    h: float = 1.0
    periodic: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 1 <= self.n <= MAX_QUBITS:
            raise InvalidModelError(f"n={self.n} outside [1, {MAX_QUBITS}]")
        if self.periodic and self.n < 3:
            raise InvalidModelError(
                "periodic chains need n >= 3; n < 3 would double count the (1,2) bond"
            )
        if not (np.isfinite(self.J) and np.isfinite(self.h)):
            raise InvalidModelError("J and h must be finite")

    @property
    def bonds(self) -> list[tuple[int, int]]:
        pairs = [(i, i + 1) for i in range(self.n - 1)]
        if self.periodic:
            pairs.append((self.n - 1, 0))
        return pairs


def _check_dims(p: PauliString, psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi)
    if psi.ndim != 1 or psi.shape[0] != 1 << p.n:
        raise DimensionError(
            f"Pauli string on {p.n} qubits cannot act on vector of shape {psi.shape}"
        )
    return psi


def _pauli_signs(p: PauliString) -> np.ndarray:
    idx = np.arange(1 << p.n, dtype=np.int64)
    return 1 - 2 * (popcount(idx & p.z_mask) & 1)


def apply_pauli(p: PauliString, psi: np.ndarray) -> np.ndarray:
    """Return ``P|psi>`` as a new array.

    The amplitude at index ``s`` moves to ``s ^ x_mask`` and picks up
    ``i**|x&z| * (-1)**|z&s|``.
    """
    psi = _check_dims(p, psi)
    idx = np.arange(psi.shape[0], dtype=np.int64)
    out = np.empty(psi.shape, dtype=complex)
    out[idx ^ p.x_mask] = p.phase * _pauli_signs(p) * psi
    return out


def pauli_expectation(p: PauliString, psi: np.ndarray) -> float:
    psi = _check_dims(p, psi)
    if not is_normalized(psi):
        raise ContractViolation("pauli_expectation needs a normalized state")
    val = np.vdot(psi, apply_pauli(p, psi))
    if abs(val.imag) >= 1e-10:
        raise ContractViolation(f"non-real Pauli expectation {val}")
    return float(val.real)


def tfim_terms(model: TfimModel) -> list[PauliTerm]:
    """ZZ bond terms (coefficient J) followed by X terms (coefficient -h)."""
    model.validate()
    n = model.n
    terms = [
        PauliTerm(PauliString(0, (1 << i) | (1 << j), n), float(model.J))
        for i, j in model.bonds
    ]
    terms += [PauliTerm(PauliString(1 << i, 0, n), -float(model.h)) for i in range(n)]
    return terms


def apply_terms(terms: list[PauliTerm], psi: np.ndarray) -> np.ndarray:
    """``sum_k c_k P_k |psi>`` without building a matrix."""
    out = np.zeros(np.shape(psi), dtype=complex)
    for t in terms:
        out += t.coefficient * apply_pauli(t.op, psi)
    return out


def expectation_of_terms(terms: list[PauliTerm], psi: np.ndarray) -> float:
    """``<psi|H|psi> / <psi|psi>`` for ``H = sum_k c_k P_k``.

    Unnormalized input is accepted.  An empty term list gives 0 and emits an
    :class:`EmptyTermsWarning`.
    """
    if not terms:
        warnings.warn("empty term list; expectation is 0", EmptyTermsWarning, stacklevel=2)
        return 0.0
    psi = np.asarray(psi, dtype=complex)
    n = terms[0].op.n
    if any(t.op.n != n for t in terms):
        raise DimensionError("terms act on different qubit counts")
    norm2 = np.vdot(psi, psi).real
    if norm2 <= 0:
        raise ContractViolation("zero vector has no expectation value")
    return float(np.vdot(psi, apply_terms(terms, psi)).real / norm2)
