"""2-Renyi stabilizer entropy and infidelity of dense statevectors.

The fast path groups the ``4**n`` Pauli strings by their X support.  For a
fixed ``x`` the expectations over all ``2**n`` Z supports are a single
Walsh-Hadamard transform of ``conj(psi[t ^ x]) * psi[t]``, so the full sum
costs ``O(n 4**n)`` instead of ``O(8**n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import PauliString, pauli_expectation, popcount
from .errors import CapabilityError, NumericalError
from .validation import check_same_size, check_statevector

LOG_BASE = 2.0
FAST_MAX_QUBITS = 14
NAIVE_MAX_QUBITS = 8
MOMENT_TOL = 1e-9
_I_POWERS = np.array([1, 1j, -1, -1j])


@dataclass(frozen=True)
class MagicResult:
    m2: float
    pauli_fourth_moment: float
    method: str


def fwht(a: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along the last axis.

    ``out[..., z] = sum_t (-1)**popcount(z & t) * a[..., t]``.
    """
    a = np.asarray(a)
    dim = a.shape[-1]
    n = dim.bit_length() - 1
    lead = a.shape[:-1]
    out = a.reshape(-1, dim)
    for k in range(n):
        v = out.reshape(-1, dim >> (k + 1), 2, 1 << k)
        lo, hi = v[:, :, 0, :], v[:, :, 1, :]
        out = np.stack((lo + hi, lo - hi), axis=2).reshape(-1, dim)
    return out.reshape(*lead, dim)


def _raw_spectra(psi: np.ndarray, x_masks: np.ndarray) -> np.ndarray:
    """``<X(x) Z(z)>`` without the ``i**|x&z|`` phase, one row per x."""
    idx = np.arange(psi.shape[0], dtype=np.int64)
    u = np.conj(psi[idx[None, :] ^ x_masks[:, None]]) * psi[None, :]
    return fwht(u)


def _spectra(psi: np.ndarray, x_masks: np.ndarray) -> np.ndarray:
    """Rows of Hermitian Pauli expectations, one row per x."""
    idx = np.arange(psi.shape[0], dtype=np.int64)
    w = _raw_spectra(psi, x_masks)
    phase = _I_POWERS[popcount(x_masks[:, None] & idx[None, :]) % 4]
    return (phase * w).real


def pauli_z_spectrum(psi, x_mask: int) -> np.ndarray:
    """``<psi| i**|x&z| X(x) Z(z) |psi>`` for every ``z`` at fixed ``x``."""
    psi = check_statevector(psi, normalized=True)
    if not 0 <= x_mask < psi.shape[0]:
        raise ValueError(f"x_mask {x_mask} out of range")
    return _spectra(psi, np.array([x_mask], dtype=np.int64))[0]


def _result(moment: float, method: str) -> MagicResult:
    if not -MOMENT_TOL <= moment <= 1 + MOMENT_TOL:
        raise NumericalError(f"Pauli fourth moment {moment!r} outside [0, 1]")
    moment = min(max(moment, np.finfo(float).tiny), 1.0)
    m2 = -math.log(moment, LOG_BASE)
    return MagicResult(m2=max(m2, 0.0), pauli_fourth_moment=moment, method=method)


@numba.njit(cache=True)
def _fourth_powers(psi):
    """``sum_z |<X(x) Z(z)>|**4`` for every ``x``, with an in-place transform per row."""
    dim = psi.shape[0]
    buf = np.empty(dim, dtype=np.complex128)
    out = np.empty(dim)
    for x in range(dim):
        for t in range(dim):
            buf[t] = np.conj(psi[t ^ x]) * psi[t]
        half = 1
        while half < dim:
            for start in range(0, dim, 2 * half):
                for j in range(start, start + half):
                    a = buf[j]
                    b = buf[j + half]
                    buf[j] = a + b
                    buf[j + half] = a - b
            half *= 2
        acc = 0.0
        for t in range(dim):
            # the phase has unit modulus, so |raw|**4 is the fourth power
            r = buf[t].real * buf[t].real + buf[t].imag * buf[t].imag
            acc += r * r
        out[x] = acc
    return out


def m2_fast(psi) -> MagicResult:
    """Stabilizer 2-Renyi entropy via one Walsh-Hadamard transform per X support."""
    psi = check_statevector(psi, normalized=True)
    dim = psi.shape[0]
    n = dim.bit_length() - 1
    if n > FAST_MAX_QUBITS:
        raise CapabilityError(f"m2_fast supports n <= {FAST_MAX_QUBITS}")
    partial = _fourth_powers(np.ascontiguousarray(psi, dtype=np.complex128))
    # fsum gives an exactly rounded, order independent total over the x rows
    return _result(math.fsum(partial) / dim, "fast")


def m2_naive(psi) -> MagicResult:
    """Reference implementation enumerating every Pauli string."""
    psi = check_statevector(psi, normalized=True)
    dim = psi.shape[0]
    n = dim.bit_length() - 1
    if n > NAIVE_MAX_QUBITS:
        raise CapabilityError(f"m2_naive is O(8**n); limited to n <= {NAIVE_MAX_QUBITS}")
    terms = [
        pauli_expectation(PauliString(x, z, n), psi) ** 4
        for x in range(dim)
        for z in range(dim)
    ]
    return _result(math.fsum(terms) / dim, "naive")


def stabilizer_entropy(psi) -> float:
    return m2_fast(psi).m2


def infidelity(psi, phi) -> float:
    """``1 - |<psi|phi>|**2`` clamped to ``[0, 1]``."""
    psi = check_statevector(psi, normalized=True)
    phi = check_statevector(phi, normalized=True)
    check_same_size(psi, phi)
    # |<a|b>| == |<b|a>| bitwise, which keeps the measure exactly symmetric
    overlap = abs(np.vdot(psi, phi)) if psi.tobytes() <= phi.tobytes() else abs(np.vdot(phi, psi))
    return float(min(max(1.0 - overlap**2, 0.0), 1.0))


class StabilizerEntropy(TransformerMixin, BaseEstimator):
    """Map rows of statevectors to their stabilizer Renyi entropy.

    Stateless; ``fit`` only records the qubit count so ``transform`` can
    reject inputs of a different size.

    Parameters
    ----------
    method : {"fast", "naive"}
    """

    def __init__(self, method="fast"):
        self.method = method

    def fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X))
        self.n_qubits_ = X.shape[1].bit_length() - 1
        return self

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X))
        if hasattr(self, "n_qubits_") and X.shape[1] != 1 << self.n_qubits_:
            raise ValueError(f"expected {1 << self.n_qubits_} amplitudes per row")
        fn = {"fast": m2_fast, "naive": m2_naive}[self.method]
        return np.array([[fn(row).m2] for row in X])
