"""Single-spin-flip Metropolis sampling of ``|psi(s)|**2``.

Random numbers are drawn up front from a seeded numpy generator and the
kernel consumes them chain by chain, so a given seed yields the same
samples regardless of how the work is scheduled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..core import bits_from_spins
from ..errors import ConfigError, ContractViolation
from .rbm import RbmParameters, log_amplitudes

MAX_START_RETRIES = 100


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 1000
    n_chains: int = 8
    burn_in: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.n_chains < 1:
            raise ConfigError("n_samples and n_chains must be positive")
        if self.n_samples % self.n_chains:
            raise ConfigError(
                f"n_samples={self.n_samples} not divisible by n_chains={self.n_chains}"
            )
        if self.burn_in < 1:
            raise ConfigError("burn_in must be at least one sweep")

    @property
    def per_chain(self) -> int:
        return self.n_samples // self.n_chains


@numba.njit(cache=True)
def _log2cosh(z):
    if z.real < 0:
        z = -z
    return z + np.log(1.0 + np.exp(-2.0 * z))


@numba.njit(cache=True)
def _combine(lp, lm, symmetric):
    if not symmetric:
        return lp
    if lm.real > lp.real or (lm.real == lp.real and lm.imag > lp.imag):
        hi, lo = lm, lp
    else:
        hi, lo = lp, lm
    if np.isinf(hi.real) and hi.real < 0:
        return complex(-np.inf, 0.0)
    total = 1.0 + np.exp(lo - hi)
    if abs(total) <= 4 * np.finfo(np.float64).eps:
        return complex(-np.inf, 0.0)
    return hi + np.log(total) - np.log(2.0)


@numba.njit(cache=True)
def _metropolis(a, b, W, sigma0, symmetric, burn_in, per_chain, sites, logu):
    n_chains, n = sigma0.shape
    m = b.shape[0]
    out = np.empty((n_chains * per_chain, n))
    final = np.empty_like(sigma0)
    tp = np.empty(m, dtype=np.complex128)
    tm = np.empty(m, dtype=np.complex128)
    steps = (burn_in + per_chain) * n
    accepted = 0
    k = 0
    for c in range(n_chains):
        sig = sigma0[c].copy()
        vis = 0j
        for j in range(n):
            vis += a[j] * sig[j]
        for i in range(m):
            acc = 0j
            for j in range(n):
                acc += W[i, j] * sig[j]
            tp[i] = b[i] + acc
            tm[i] = b[i] - acc
        lp = vis
        lm = -vis
        for i in range(m):
            lp += _log2cosh(tp[i])
            if symmetric:
                lm += _log2cosh(tm[i])
        lcur = _combine(lp, lm, symmetric)
        row = c * per_chain
        for t in range(steps):
            j = sites[k]
            d = -2.0 * sig[j]
            nvis = vis + d * a[j]
            nlp = nvis
            nlm = -nvis
            for i in range(m):
                nlp += _log2cosh(tp[i] + d * W[i, j])
                if symmetric:
                    nlm += _log2cosh(tm[i] - d * W[i, j])
            lnew = _combine(nlp, nlm, symmetric)
            if logu[k] < 2.0 * (lnew.real - lcur.real):
                sig[j] = -sig[j]
                vis = nvis
                for i in range(m):
                    tp[i] += d * W[i, j]
                    tm[i] -= d * W[i, j]
                lcur = lnew
                accepted += 1
            k += 1
            if t >= burn_in * n and (t + 1 - burn_in * n) % n == 0:
                out[row] = sig
                row += 1
        final[c] = sig
    return out, final, accepted


@numba.njit(cache=True)
def _metropolis_ratio(a, b, W, sigma0, symmetric, burn_in, per_chain, sites, logu):
    """Same chain as :func:`_metropolis`, but with cosh-ratio updates.

    ``psi(s')/psi(s)`` for a single flip is a product of
    ``cosh(2W) - s_j tanh(theta) sinh(2W)`` factors, so a proposal costs
    ``m`` complex multiplies; ``tanh`` is refreshed only on acceptance.
    """
    n_chains, n = sigma0.shape
    m = b.shape[0]
    ch = np.cosh(2.0 * W)
    sh = np.sinh(2.0 * W)
    out = np.empty((n_chains * per_chain, n))
    final = np.empty_like(sigma0)
    tp = np.empty(m, dtype=np.complex128)
    tm = np.empty(m, dtype=np.complex128)
    thp = np.empty(m, dtype=np.complex128)
    thm = np.empty(m, dtype=np.complex128)
    steps = (burn_in + per_chain) * n
    accepted = 0
    k = 0
    for c in range(n_chains):
        sig = sigma0[c].copy()
        vis = 0j
        for j in range(n):
            vis += a[j] * sig[j]
        lp = vis
        lm = -vis
        for i in range(m):
            acc = 0j
            for j in range(n):
                acc += W[i, j] * sig[j]
            tp[i] = b[i] + acc
            tm[i] = b[i] - acc
            thp[i] = np.tanh(tp[i])
            thm[i] = np.tanh(tm[i])
            lp += _log2cosh(tp[i])
            lm += _log2cosh(tm[i])
        row = c * per_chain
        for t in range(steps):
            j = sites[k]
            s = sig[j]
            rp = np.exp(-2.0 * s * a[j])
            for i in range(m):
                rp *= ch[i, j] - s * thp[i] * sh[i, j]
            if symmetric:
                rm = np.exp(2.0 * s * a[j])
                for i in range(m):
                    rm *= ch[i, j] + s * thm[i] * sh[i, j]
                # psi_sym(s')/psi_sym(s) = w_+ r_+ + w_- r_-
                wp = 1.0 / (1.0 + np.exp(lm - lp))
                wm = 1.0 / (1.0 + np.exp(lp - lm))
                ratio = wp * rp + wm * rm
            else:
                rm = 1.0 + 0j
                ratio = rp
            mag2 = ratio.real * ratio.real + ratio.imag * ratio.imag
            if logu[k] < np.log(mag2):
                d = -2.0 * s
                sig[j] = -s
                for i in range(m):
                    tp[i] += d * W[i, j]
                    tm[i] -= d * W[i, j]
                    thp[i] = np.tanh(tp[i])
                    if symmetric:
                        thm[i] = np.tanh(tm[i])
                lp += np.log(rp)
                if symmetric:
                    lm += np.log(rm)
                accepted += 1
            k += 1
            if t >= burn_in * n and (t + 1 - burn_in * n) % n == 0:
                out[row] = sig
                row += 1
        final[c] = sig
    return out, final, accepted


# beyond this |Re W| the cosh(2W) tables lose precision; use the log-domain kernel
_RATIO_MAX_WEIGHT = 20.0


@dataclass
class SampleBatch:
    sigma: np.ndarray
    final_state: np.ndarray
    acceptance: float

    @property
    def bits(self) -> np.ndarray:
        return bits_from_spins(self.sigma)


def _start_states(params, n_chains, symmetric, rng) -> np.ndarray:
    sigma = 1.0 - 2.0 * rng.integers(0, 2, size=(n_chains, params.n))
    for _ in range(MAX_START_RETRIES):
        bad = ~np.isfinite(log_amplitudes(params, sigma, symmetric).real)
        if not bad.any():
            return sigma
        sigma[bad] = 1.0 - 2.0 * rng.integers(0, 2, size=(int(bad.sum()), params.n))
    raise ContractViolation("could not find a start configuration with nonzero amplitude")


def sample_spins(
    params: RbmParameters,
    config: SamplerConfig,
    symmetric: bool = False,
    rng: np.random.Generator | None = None,
    start: np.ndarray | None = None,
    burn_in: int | None = None,
) -> SampleBatch:
    """Draw ``config.n_samples`` spin configurations, one per sweep after burn-in."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    burn = config.burn_in if burn_in is None else burn_in
    if start is None:
        start = _start_states(params, config.n_chains, symmetric, rng)
    steps = config.n_chains * (burn + config.per_chain) * params.n
    sites = rng.integers(0, params.n, size=steps)
    logu = np.log(rng.random(size=steps))
    kernel = _metropolis_ratio if np.abs(params.W.real).max(initial=0.0) < _RATIO_MAX_WEIGHT else _metropolis
    out, final, accepted = kernel(
        params.a, params.b, params.W, np.ascontiguousarray(start, dtype=float),
        bool(symmetric), int(burn), int(config.per_chain), sites, logu,
    )
    return SampleBatch(out, final, accepted / steps)


def sample(params: RbmParameters, model, config: SamplerConfig, symmetric: bool = False) -> np.ndarray:
    """Bitmasks of ``config.n_samples`` configurations drawn from ``|psi|**2``."""
    if getattr(model, "n", params.n) != params.n:
        raise ContractViolation("model and RBM disagree on the number of sites")
    return sample_spins(params, config, symmetric).bits
