"""Stochastic-reconfiguration training of RBM states with Adam and early stopping."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ..core import TfimModel, expectation_of_terms, tfim_terms
from ..errors import ConfigError, ConvergenceError
from ..validation import check_model
from .rbm import RbmParameters, energy_and_gradient, rbm_statevector
from .sampler import SamplerConfig, sample_spins

log = logging.getLogger(__name__)

# samples per size; larger systems fall back to the n=12 count
DEFAULT_SAMPLES = {8: 1000, 12: 5000}


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and stopping settings.

    ``stop_rule`` picks how ``stop_tol``/``stop_patience`` are read:

    * ``"no_improvement"``: stop once the best energy seen has not improved
      by more than ``stop_tol`` (relative) for ``stop_patience`` epochs.
    * ``"relative_change"``: stop once ``|E_t - E_{t-1}| / |E_{t-1}|`` stayed
      below ``stop_tol`` for ``stop_patience`` consecutive epochs.
    """

    learning_rate: float = 0.01
    sr_shift: float = 1e-3
    max_epochs: int = 20_000
    stop_tol: float = 1e-7
    stop_patience: int = 500
    expectation_mode: str = "monte_carlo"
    symmetric: bool = False
    stop_rule: str = "no_improvement"
    init_scale: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cg_tol: float = 1e-8

    def __post_init__(self):
        if not self.stop_tol > 0:
            raise ConfigError("stop_tol must be > 0")
        if self.stop_patience < 1:
            raise ConfigError("stop_patience must be >= 1")
        if self.expectation_mode not in ("monte_carlo", "full_sum"):
            raise ConfigError(f"unknown expectation_mode {self.expectation_mode!r}")
        if self.stop_rule not in ("no_improvement", "relative_change"):
            raise ConfigError(f"unknown stop_rule {self.stop_rule!r}")
        if self.learning_rate <= 0 or self.sr_shift < 0:
            raise ConfigError("learning_rate must be > 0 and sr_shift >= 0")


def relative_change(prev: float, cur: float) -> float:
    if abs(prev) < 1e-12:
        return abs(cur - prev)
    return abs(cur - prev) / abs(prev)


class EarlyStopping:
    """Stateful stopping predicate fed one energy per epoch."""

    def __init__(self, tol: float, patience: int, rule: str = "no_improvement"):
        self.tol = tol
        self.patience = patience
        self.rule = rule
        self.prev = None
        self.best = math.inf
        self.count = 0

    def update(self, energy: float) -> bool:
        if self.rule == "relative_change":
            if self.prev is not None and relative_change(self.prev, energy) < self.tol:
                self.count += 1
            else:
                self.count = 0
            self.prev = energy
        else:
            if self.best == math.inf or energy < self.best - self.tol * abs(self.best):
                self.best = energy
                self.count = 0
            else:
                self.count += 1
        return self.count >= self.patience


def stopping_satisfied(history, tol: float, patience: int, rule: str = "no_improvement") -> bool:
    """Replay ``history`` through :class:`EarlyStopping`; True if it fires at the last epoch."""
    stop = EarlyStopping(tol, patience, rule)
    fired = [stop.update(e) for e in history]
    return bool(fired) and fired[-1] and not any(fired[:-1])


class Adam:
    """Adam on complex parameters, treating real and imaginary parts as separate reals."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        g = np.concatenate([grad.real, grad.imag]) if np.iscomplexobj(grad) else grad
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        upd = self.lr * mhat / (np.sqrt(vhat) + self.eps)
        if np.iscomplexobj(grad):
            k = grad.shape[0]
            return upd[:k] + 1j * upd[k:]
        return upd


def conjugate_gradient(A: np.ndarray, b: np.ndarray, rtol: float, maxiter: int):
    """Plain CG for a Hermitian positive definite dense matrix; returns (x, converged)."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.vdot(r, r).real
    target = (rtol * np.linalg.norm(b)) ** 2
    if rs <= target:
        return x, True
    for _ in range(maxiter):
        Ap = A @ p
        denom = np.vdot(p, Ap).real
        if not denom > 0:
            return x, False
        step = rs / denom
        x += step * p
        r -= step * Ap
        rs_new = np.vdot(r, r).real
        if rs_new <= target:
            return x, True
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, False


def sr_direction(S: np.ndarray, gradient: np.ndarray, shift: float, tol: float = 1e-8,
                 retries: int = 3) -> tuple[np.ndarray, float]:
    """Solve ``(S + shift I) x = gradient`` by conjugate gradient.

    On failure the shift is multiplied by 10, at most ``retries`` times.
    Returns the solution and the shift that was finally used.
    """
    eye = np.eye(S.shape[0])
    for _ in range(retries + 1):
        A = S + shift * eye
        x, ok = conjugate_gradient(A, gradient, tol, 10 * S.shape[0])
        if ok and np.all(np.isfinite(x)):
            return x, shift
        shift = max(shift * 10.0, 1e-12)
    raise ConvergenceError(f"SR linear solve failed up to shift {shift / 10:.1e}")


@dataclass
class TrainHistory:
    energy: list = field(default_factory=list)
    energy_stderr: list = field(default_factory=list)
    converged: bool = False
    epochs: int = 0
    acceptance: list = field(default_factory=list)


def default_sampler(n: int, seed: int = 0) -> SamplerConfig:
    n_samples = DEFAULT_SAMPLES.get(n, 5000 if n > 8 else 1000)
    return SamplerConfig(n_samples=n_samples, n_chains=8, burn_in=100, seed=seed)


def train_rbm(
    model: TfimModel,
    alpha: int = 1,
    train_config: TrainConfig | None = None,
    sampler_config: SamplerConfig | None = None,
    seed: int = 0,
    init: RbmParameters | None = None,
) -> tuple[RbmParameters, TrainHistory]:
    """Minimize the energy of an RBM: sample, estimate, SR-precondition, Adam step.

    Stops by the configured early-stopping rule or at ``max_epochs``.
    """
    model = check_model(model)
    tc = train_config or TrainConfig()
    sc = sampler_config or default_sampler(model.n, seed)
    rng = np.random.default_rng(seed)
    params = init if init is not None else RbmParameters.random(model.n, alpha, rng, tc.init_scale)
    terms = tfim_terms(model)
    flat = params.flat()
    adam = Adam(tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps)
    stop = EarlyStopping(tc.stop_tol, tc.stop_patience, tc.stop_rule)
    hist = TrainHistory()
    chains = None
    shift = tc.sr_shift
    for epoch in range(tc.max_epochs):
        if tc.expectation_mode == "monte_carlo":
            batch = sample_spins(
                params, sc, tc.symmetric, rng=rng, start=chains,
                burn_in=sc.burn_in if chains is None else max(1, sc.burn_in // 10),
            )
            chains = batch.final_state
            hist.acceptance.append(batch.acceptance)
            est = energy_and_gradient(params, terms, batch.sigma, symmetric=tc.symmetric)
        else:
            est = energy_and_gradient(params, terms, symmetric=tc.symmetric)
        if not (np.isfinite(est.energy) and np.all(np.isfinite(est.gradient))):
            raise ConvergenceError(
                f"RBM training diverged at epoch {epoch}: energy={est.energy!r}"
            )
        hist.energy.append(est.energy)
        hist.energy_stderr.append(est.stderr)
        hist.epochs = epoch + 1
        if stop.update(est.energy):
            hist.converged = True
            break
        delta, used = sr_direction(est.S, est.gradient, shift, tc.cg_tol)
        if used != shift:
            log.warning("SR shift raised from %g to %g at epoch %d", shift, used, epoch)
            shift = used
        flat = flat - adam.step(delta)
        params = RbmParameters.from_flat(flat, params.n, params.m)
    return params, hist


def save_rbm(path, params: RbmParameters, symmetric: bool, seed: int, history=None) -> None:
    from .._io import atomic_write_text

    def cplx(x):
        return np.stack([np.real(x), np.imag(x)], axis=-1).tolist()

    blob = {
        "n": params.n,
        "M": params.m,
        "a": cplx(params.a),
        "b": cplx(params.b),
        "W": cplx(params.W),
        "symmetric": bool(symmetric),
        "seed": int(seed),
        "history": list(map(float, history or [])),
    }
    atomic_write_text(path, json.dumps(blob))


def load_rbm(path) -> tuple[RbmParameters, dict]:
    with open(path) as fh:
        blob = json.load(fh)

    def cplx(x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] + 1j * x[..., 1]

    params = RbmParameters(cplx(blob["a"]), cplx(blob["b"]), cplx(blob["W"]))
    if params.n != blob["n"] or params.m != blob["M"]:
        raise ValueError("RBM blob header does not match its arrays")
    meta = {k: blob[k] for k in ("symmetric", "seed", "history")}
    return params, meta


class RBMSolver(BaseEstimator):
    """Variational Monte Carlo ground state search with an RBM.

    Parameters
    ----------
    alpha : int
        Hidden units per visible unit.
    symmetric : bool
        Average amplitudes of ``s`` and ``-s`` (Z2-invariant ansatz).
    expectation_mode : {"monte_carlo", "full_sum"}
    n_samples : int or None
        Monte Carlo samples per epoch; None picks 1000 (n <= 8) or 5000.
    """

    def __init__(
        self,
        alpha=1,
        symmetric=False,
        expectation_mode="monte_carlo",
        learning_rate=0.01,
        sr_shift=1e-3,
        max_epochs=20_000,
        stop_tol=1e-7,
        stop_patience=500,
        stop_rule="no_improvement",
        n_samples=None,
        n_chains=8,
        burn_in=100,
        init_scale=0.01,
        seed=0,
    ):
        self.alpha = alpha
        self.symmetric = symmetric
        self.expectation_mode = expectation_mode
        self.learning_rate = learning_rate
        self.sr_shift = sr_shift
        self.max_epochs = max_epochs
        self.stop_tol = stop_tol
        self.stop_patience = stop_patience
        self.stop_rule = stop_rule
        self.n_samples = n_samples
        self.n_chains = n_chains
        self.burn_in = burn_in
        self.init_scale = init_scale
        self.seed = seed

    def _configs(self, n):
        tc = TrainConfig(
            learning_rate=self.learning_rate,
            sr_shift=self.sr_shift,
            max_epochs=self.max_epochs,
            stop_tol=self.stop_tol,
            stop_patience=self.stop_patience,
            expectation_mode=self.expectation_mode,
            symmetric=self.symmetric,
            stop_rule=self.stop_rule,
            init_scale=self.init_scale,
        )
        ns = self.n_samples or default_sampler(n).n_samples
        sc = SamplerConfig(ns, self.n_chains, self.burn_in, self.seed)
        return tc, sc

    def fit(self, model, y=None):
        model = check_model(model)
        tc, sc = self._configs(model.n)
        self.params_, self.history_ = train_rbm(model, self.alpha, tc, sc, self.seed)
        self.state_ = rbm_statevector(self.params_, self.symmetric)
        self.energy_ = expectation_of_terms(tfim_terms(model), self.state_)
        self.converged_ = self.history_.converged
        self.n_epochs_ = self.history_.epochs
        return self

    def metadata(self) -> dict:
        return {
            "epochs": self.n_epochs_,
            "final_estimate": self.history_.energy[-1],
            "config": asdict(self._configs(self.params_.n)[0]),
        }
