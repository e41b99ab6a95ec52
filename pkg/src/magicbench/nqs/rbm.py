"""Restricted Boltzmann machine wavefunction and its VMC estimators.

``log psi(s) = sum_j a_j s_j + sum_i log(2 cosh(b_i + sum_j W_ij s_j))``

The symmetric variant averages the amplitudes of ``s`` and ``-s``.
Spins are +1/-1 floats with shape ``(..., n)``; see :mod:`magicbench.core`
for the bit convention.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..core import PauliTerm, spins
from ..errors import ContractViolation, DimensionError, NumericalError

LOG_ZERO = complex(-np.inf, 0.0)
LOG2 = math.log(2.0)
RBM_MAX_QUBITS = 14
CANCEL_TOL = 4 * np.finfo(float).eps


@dataclass
class RbmParameters:
    """Complex visible biases ``a`` (n), hidden biases ``b`` (m), weights ``W`` (m, n)."""

    a: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=complex)
        self.b = np.asarray(self.b, dtype=complex)
        self.W = np.asarray(self.W, dtype=complex)
        if self.W.shape != (self.b.shape[0], self.a.shape[0]):
            raise DimensionError(
                f"W has shape {self.W.shape}, expected {(self.b.shape[0], self.a.shape[0])}"
            )

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def alpha(self) -> float:
        return self.m / self.n

    @property
    def n_params(self) -> int:
        return self.n + self.m + self.m * self.n

    @classmethod
    def zeros(cls, n: int, alpha: int = 1) -> RbmParameters:
        m = int(alpha * n)
        return cls(np.zeros(n), np.zeros(m), np.zeros((m, n)))

    @classmethod
    def random(cls, n: int, alpha: int, rng: np.random.Generator, scale: float = 0.01):
        """Complex Gaussian entries with standard deviation ``scale`` per component."""
        m = int(alpha * n)
        size = n + m + m * n
        flat = rng.normal(scale=scale, size=size) + 1j * rng.normal(scale=scale, size=size)
        return cls.from_flat(flat, n, m)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.W.ravel()])

    @classmethod
    def from_flat(cls, flat: np.ndarray, n: int, m: int) -> RbmParameters:
        flat = np.asarray(flat, dtype=complex)
        if flat.shape != (n + m + m * n,):
            raise DimensionError(f"flat vector has {flat.shape}, expected {n + m + m * n}")
        return cls(flat[:n].copy(), flat[n : n + m].copy(), flat[n + m :].reshape(m, n).copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))


def log2cosh(z):
    """``log(2 cosh z)`` without overflow for large ``|Re z|``."""
    z = np.asarray(z, dtype=complex)
    if z.size and np.max(np.abs(z.real)) < 300.0:
        return np.log(2.0 * np.cosh(z))
    z = np.where(z.real < 0, -z, z)
    return z + np.log1p(np.exp(-2.0 * z))


def _log_mean_exp(lp, lm):
    """``log((exp(lp) + exp(lm)) / 2)``, stable and symmetric in its arguments."""
    lp, lm = np.broadcast_arrays(np.asarray(lp, dtype=complex), np.asarray(lm, dtype=complex))
    swap = (lm.real > lp.real) | ((lm.real == lp.real) & (lm.imag > lp.imag))
    hi = np.where(swap, lm, lp)
    lo = np.where(swap, lp, lm)
    with np.errstate(invalid="ignore", divide="ignore"):
        diff = np.where(np.isneginf(lo.real), -np.inf, lo - hi)
        total = 1.0 + np.exp(diff)
        # cancellation down to rounding counts as an exact zero
        total = np.where(np.abs(total) <= CANCEL_TOL, 0.0, total)
        out = hi + np.log(total) - LOG2
    out = np.where(np.isneginf(hi.real), LOG_ZERO, out)
    return np.where(np.isnan(out), LOG_ZERO, out)


class _Activations:
    """Cached visible term and hidden pre-activations of a batch of spins."""

    def __init__(self, sigma, vis, theta_p, theta_m=None):
        self.sigma = sigma
        self.vis = vis
        self.theta_p = theta_p
        self.theta_m = theta_m
        self._parts = None
        self._tanh = None

    @classmethod
    def build(cls, params: RbmParameters, sigma: np.ndarray, symmetric: bool):
        wsig = sigma @ params.W.T
        return cls(
            sigma,
            sigma @ params.a,
            params.b + wsig,
            params.b - wsig if symmetric else None,
        )

    def parts(self):
        if self._parts is None:
            lp = self.vis + log2cosh(self.theta_p).sum(axis=-1)
            lm = None
            if self.theta_m is not None:
                lm = -self.vis + log2cosh(self.theta_m).sum(axis=-1)
            self._parts = (lp, lm)
        return self._parts

    def log_psi(self):
        lp, lm = self.parts()
        return lp if lm is None else _log_mean_exp(lp, lm)

    def tanh(self):
        if self._tanh is None:
            tm = None if self.theta_m is None else np.tanh(self.theta_m)
            self._tanh = (np.tanh(self.theta_p), tm)
        return self._tanh

    def branch_weights(self):
        """``psi_+ / (psi_+ + psi_-)`` and ``psi_- / (psi_+ + psi_-)`` per configuration."""
        lp, lm = self.parts()
        lsym = _log_mean_exp(lp, lm)
        return 0.5 * np.exp(lp - lsym), 0.5 * np.exp(lm - lsym)

    def flipped(self, params: RbmParameters, sites: np.ndarray) -> _Activations:
        """Activations after flipping ``sites``, updated in O(m) per flipped site."""
        dsig = -2.0 * self.sigma[:, sites]
        dw = dsig @ params.W[:, sites].T
        sigma = self.sigma.copy()
        sigma[:, sites] *= -1
        return _Activations(
            sigma,
            self.vis + dsig @ params.a[sites],
            self.theta_p + dw,
            None if self.theta_m is None else self.theta_m - dw,
        )

    def single_flip_ratios(self, params: RbmParameters) -> np.ndarray:
        """``psi(s with site j flipped) / psi(s)`` for every ``j``, shape ``(B, n)``.

        Uses ``cosh(t + d) / cosh(t) = cosh(d) + tanh(t) sinh(d)`` so no
        transcendental is evaluated per configuration beyond ``tanh``.
        """
        ch, sh = np.cosh(2.0 * params.W), np.sinh(2.0 * params.W)
        tp, tm = self.tanh()
        sig = self.sigma
        # factor[b, i, j] = cosh(2 W_ij) - s_j tanh(theta_i) sinh(2 W_ij)
        rp = np.exp(-2.0 * sig * params.a) * np.prod(
            ch[None] - sig[:, None, :] * tp[:, :, None] * sh[None], axis=1
        )
        if tm is None:
            return rp
        rm = np.exp(2.0 * sig * params.a) * np.prod(
            ch[None] + sig[:, None, :] * tm[:, :, None] * sh[None], axis=1
        )
        wp, wm = self.branch_weights()
        return wp[:, None] * rp + wm[:, None] * rm


def log_amplitudes(params: RbmParameters, sigma: np.ndarray, symmetric: bool = False):
    """Batched ``log psi`` for spins of shape ``(B, n)``."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if sigma.shape[-1] != params.n:
        raise DimensionError(f"spin configurations have {sigma.shape[-1]} sites, RBM has {params.n}")
    return _Activations.build(params, sigma, symmetric).log_psi()


def log_amplitude(params: RbmParameters, bits: int) -> complex:
    """``log psi(s)`` of one configuration given as a bitmask."""
    out = complex(log_amplitudes(params, spins(bits, params.n)[None, :].astype(float))[0])
    if not np.isfinite(out):
        raise NumericalError(f"non-finite log amplitude {out}; parameters blew up")
    return out


def log_amplitude_symmetric(params: RbmParameters, bits: int) -> complex:
    """``log((psi(s) + psi(-s)) / 2)``; returns ``LOG_ZERO`` on exact cancellation."""
    return complex(log_amplitudes(params, spins(bits, params.n)[None, :].astype(float), True)[0])


def rbm_statevector(params: RbmParameters, symmetric: bool = False) -> np.ndarray:
    """Normalized dense statevector over all ``2**n`` configurations."""
    n = params.n
    if n > RBM_MAX_QUBITS:
        raise DimensionError(f"dense RBM statevector limited to n <= {RBM_MAX_QUBITS}")
    dim = 1 << n
    if symmetric:
        # evaluate half the basis and mirror; psi(s) == psi(~s) holds exactly
        half = np.arange(dim // 2, dtype=np.int64)
        logs = log_amplitudes(params, spins(half, n).astype(float), True)
        logs = np.concatenate([logs, logs[::-1]])
    else:
        logs = log_amplitudes(params, spins(np.arange(dim), n).astype(float))
    finite = np.isfinite(logs.real)
    if not finite.any():
        raise NumericalError("every amplitude is zero; degenerate RBM state")
    shift = logs.real[finite].max()
    psi = np.zeros(dim, dtype=complex)
    psi[finite] = np.exp(logs[finite] - shift)
    return psi / np.linalg.norm(psi)


def log_derivatives(params: RbmParameters, act: _Activations) -> np.ndarray:
    """``O_k = d log psi / d theta_k`` for each configuration, shape ``(B, n_params)``."""

    def plain(sig, t):
        return np.concatenate([sig, t, (t[:, :, None] * sig[:, None, :]).reshape(len(sig), -1)], axis=1)

    tp, tm = act.tanh()
    o_p = plain(act.sigma.astype(complex), tp)
    if tm is None:
        return o_p
    wp, wm = act.branch_weights()
    o_m = plain(-act.sigma.astype(complex), tm)
    return wp[:, None] * o_p + wm[:, None] * o_m


def _term_groups(terms: list[PauliTerm]):
    groups = defaultdict(list)
    for t in terms:
        groups[t.op.x_mask].append(t)
    out = []
    for x in sorted(groups):
        n = groups[x][0].op.n
        sites = np.array([j for j in range(n) if (x >> j) & 1], dtype=np.int64)
        entries = [
            (np.array([j for j in range(n) if (t.op.z_mask >> j) & 1], dtype=np.int64),
             t.coefficient * t.op.phase)
            for t in groups[x]
        ]
        out.append((sites, entries))
    return out


def _local_energies(params, act: _Activations, terms: list[PauliTerm]) -> np.ndarray:
    logpsi = act.log_psi()
    if np.any(np.isneginf(logpsi.real)):
        raise ContractViolation("local energy undefined where psi(s) = 0")
    eloc = np.zeros(act.sigma.shape[0], dtype=complex)
    ratios = None
    for sites, entries in _term_groups(terms):
        # <s|P|s'> = i^|x&z| * (-1)^|z & s'| with s' = s ^ x
        mel = sum(
            c * (-1) ** int(np.isin(z, sites).sum()) * np.prod(act.sigma[:, z], axis=1)
            for z, c in entries
        )
        if sites.size == 1:
            if ratios is None:
                with np.errstate(all="ignore"):
                    ratios = act.single_flip_ratios(params)
            r = ratios[:, sites[0]]
            if not np.all(np.isfinite(r)):
                r = np.exp(act.flipped(params, sites).log_psi() - logpsi)
            eloc += mel * r
        elif sites.size:
            eloc += mel * np.exp(act.flipped(params, sites).log_psi() - logpsi)
        else:
            eloc += mel
    return eloc


def local_energy(params: RbmParameters, bits: int, terms: list[PauliTerm], symmetric: bool = False) -> complex:
    """``sum_s' <s|H|s'> psi(s') / psi(s)`` for one configuration."""
    sigma = spins(bits, params.n)[None, :].astype(float)
    act = _Activations.build(params, sigma, symmetric)
    return complex(_local_energies(params, act, terms)[0])


def local_energies(params, sigma, terms, symmetric: bool = False) -> np.ndarray:
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    return _local_energies(params, _Activations.build(params, sigma, symmetric), terms)


@dataclass
class VmcEstimate:
    """Energy, gradient and quantum geometric tensor from one batch.

    ``gradient`` is complex: its real part is ``dE/dRe(theta)`` and its
    imaginary part ``dE/dIm(theta)``.
    """

    energy: float
    energy_imag: float
    stderr: float
    gradient: np.ndarray
    S: np.ndarray
    n_configs: int


def full_basis(n: int) -> np.ndarray:
    return spins(np.arange(1 << n), n).astype(float)


def exact_weights(params: RbmParameters, sigma: np.ndarray, symmetric: bool) -> np.ndarray:
    logs = log_amplitudes(params, sigma, symmetric)
    finite = np.isfinite(logs.real)
    w = np.zeros(len(logs))
    w[finite] = np.exp(2.0 * (logs.real[finite] - logs.real[finite].max()))
    return w / w.sum()


def energy_and_gradient(
    params: RbmParameters,
    terms: list[PauliTerm],
    sigma: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    symmetric: bool = False,
) -> VmcEstimate:
    """Estimate energy, gradient and S from weighted configurations.

    With ``sigma=None`` the whole basis is used with exact Born weights
    (full-sum mode).  Otherwise ``sigma`` are Monte Carlo samples, equally
    weighted unless ``weights`` is given.
    """
    if sigma is None:
        sigma = full_basis(params.n)
        weights = exact_weights(params, sigma, symmetric)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if weights is None:
        weights = np.full(sigma.shape[0], 1.0 / sigma.shape[0])
    else:
        weights = np.asarray(weights, dtype=float)
        keep = weights > 0
        sigma, weights = sigma[keep], weights[keep] / weights[keep].sum()

    act = _Activations.build(params, sigma, symmetric)
    eloc = _local_energies(params, act, terms)
    O = log_derivatives(params, act)
    energy = np.dot(weights, eloc)
    dO = O - weights @ O
    force = np.conj(dO).T @ (weights * (eloc - energy))
    root = np.sqrt(weights)[:, None] * dO
    S = root.conj().T @ root
    var = float(np.dot(weights, np.abs(eloc - energy) ** 2))
    return VmcEstimate(
        energy=float(energy.real),
        energy_imag=float(energy.imag),
        stderr=math.sqrt(var / len(weights)),
        gradient=2.0 * force,
        S=S,
        n_configs=len(weights),
    )


