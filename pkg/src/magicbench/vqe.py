"""Statevector simulation and training of a layered hardware-efficient ansatz.

One layer is an ``Rx`` column, an ``Ry`` column and an ``Rz`` column on all
qubits followed by a block of CNOTs.  Rotations are ``exp(-i theta sigma/2)``.
Angles are ordered layer-major, then gate column (x, y, z), then qubit.

Every simulation routine accepts a leading batch axis on the angles, which
is how the ``2 * n_params`` shifted circuits of the parameter-shift rule
are evaluated in one pass.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numba
import numpy as np
from sklearn.base import BaseEstimator

from ._io import atomic_write_text
from .core import PauliTerm, TfimModel, basis_state, spins, tfim_terms
from .errors import ConfigError, DimensionError
from .exact import TermOperator
from .nqs.training import Adam, relative_change
from .validation import check_model

ENTANGLERS = ("all_pairs_lex", "chain")


@dataclass(frozen=True)
class AnsatzConfig:
    n: int
    layers: int = 4
    entangler: str = "all_pairs_lex"

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.entangler not in ENTANGLERS:
            raise ConfigError(f"entangler must be one of {ENTANGLERS}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")

    @property
    def n_params(self) -> int:
        return self.layers * 3 * self.n

    def cnot_pairs(self) -> list[tuple[int, int]]:
        if self.entangler == "chain":
            return [(i, i + 1) for i in range(self.n - 1)]
        return [(i, j) for i in range(self.n) for j in range(i + 1, self.n)]


@dataclass(frozen=True)
class VqeTrainConfig:
    learning_rate: float = 0.05
    inner_tol: float = 1e-6
    inner_window: int = 3
    restart_tol: float = 1e-4
    max_restarts: int = 5
    max_epochs: int = 5000
    expectation_mode: str = "exact"
    shots: int = 1000
    seed: int = 0
    init_scale: float = math.pi
    gradient: str = "adjoint"
    zero_first: bool = True

    def __post_init__(self):
        if self.gradient not in ("adjoint", "parameter_shift"):
            raise ConfigError(f"unknown gradient method {self.gradient!r}")
        if self.inner_tol <= 0 or self.restart_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.inner_window < 2:
            raise ConfigError("inner_window must be >= 2")
        if self.expectation_mode not in ("exact", "shots"):
            raise ConfigError(f"unknown expectation_mode {self.expectation_mode!r}")
        if self.expectation_mode == "shots" and self.shots < 1:
            raise ConfigError("shots must be >= 1 in shots mode")


def cnot_block_source(config: AnsatzConfig) -> np.ndarray:
    """Index map ``src`` with ``(U_cnot psi)[t] = psi[src[t]]``."""
    idx = np.arange(1 << config.n, dtype=np.int64)
    src = idx.copy()
    for c, t in reversed(config.cnot_pairs()):
        src = src ^ (((src >> c) & 1) << t)
    return src


def _rotate(state: np.ndarray, j: int, g00, g01, g10, g11) -> np.ndarray:
    B, dim = state.shape
    v = state.reshape(B, dim >> (j + 1), 2, 1 << j)
    s0, s1 = v[:, :, 0, :], v[:, :, 1, :]
    g = [x[:, None, None] for x in (g00, g01, g10, g11)]
    return np.stack((g[0] * s0 + g[1] * s1, g[2] * s0 + g[3] * s1), axis=2).reshape(B, dim)


class AnsatzSimulator:
    """Reusable simulator for one :class:`AnsatzConfig`."""

    def __init__(self, config: AnsatzConfig):
        self.config = config
        self.src = cnot_block_source(config)
        self.inv = np.empty_like(self.src)
        self.inv[self.src] = np.arange(self.src.shape[0])
        self.zsign = spins(np.arange(1 << config.n), config.n).astype(float)

    def run(self, angles: np.ndarray, psi_in: np.ndarray | None = None) -> np.ndarray:
        cfg = self.config
        angles = np.asarray(angles, dtype=float)
        single = angles.ndim == 1
        angles = np.atleast_2d(angles)
        if angles.shape[1] != cfg.n_params:
            raise DimensionError(f"expected {cfg.n_params} angles, got {angles.shape[1]}")
        B, n = angles.shape[0], cfg.n
        psi = basis_state(n, 0) if psi_in is None else np.asarray(psi_in, dtype=complex)
        if psi.shape != (1 << n,):
            raise DimensionError(f"input state has shape {psi.shape}, expected {(1 << n,)}")
        state = np.broadcast_to(psi, (B, 1 << n)).copy()
        for layer in angles.reshape(B, cfg.layers, 3, n).transpose(1, 2, 0, 3):
            rx, ry, rz = layer
            for j in range(n):
                c, s = np.cos(rx[:, j] / 2), np.sin(rx[:, j] / 2)
                state = _rotate(state, j, c, -1j * s, -1j * s, c)
            for j in range(n):
                c, s = np.cos(ry[:, j] / 2), np.sin(ry[:, j] / 2)
                state = _rotate(state, j, c, -s, s, c)
            state = state * np.exp(-0.5j * (rz @ self.zsign.T))
            state = state[:, self.src]
        return state[0] if single else state

    def energy_and_gradient(self, angles: np.ndarray, op: TermOperator, psi_in=None):
        """Exact energy and its gradient from one forward and one reverse pass.

        Uses ``dE/dtheta_k = Im <lam_k| sigma_k |phi_k>`` where ``phi_k`` is the
        state just after gate ``k`` and ``lam_k`` is ``H psi`` propagated back to
        the same point.
        """
        cfg = self.config
        angles = np.asarray(angles, dtype=float)
        if angles.shape != (cfg.n_params,):
            raise DimensionError(f"expected {cfg.n_params} angles, got {angles.shape}")
        psi = basis_state(cfg.n, 0) if psi_in is None else np.asarray(psi_in, dtype=complex)
        perms, vals = op.tables()
        energy, grad = _adjoint(
            angles.reshape(cfg.layers, 3, cfg.n), self.src, self.inv, psi, perms, vals
        )
        return float(energy), grad.ravel()


@numba.njit(cache=True)
def _rot(st, j, ang, axis, sign):
    c = math.cos(ang / 2)
    s = sign * math.sin(ang / 2)
    step = 1 << j
    for i in range(st.shape[0]):
        if i & step:
            continue
        a, b = st[i], st[i | step]
        if axis == 0:
            st[i] = c * a - 1j * s * b
            st[i | step] = -1j * s * a + c * b
        else:
            st[i] = c * a - s * b
            st[i | step] = s * a + c * b


@numba.njit(cache=True)
def _rz_column(st, rz, sign):
    n = rz.shape[0]
    for i in range(st.shape[0]):
        acc = 0.0
        for j in range(n):
            acc += -rz[j] if (i >> j) & 1 else rz[j]
        st[i] *= complex(math.cos(0.5 * acc), -sign * math.sin(0.5 * acc))


@numba.njit(cache=True)
def _adjoint(blocks, src, inv, psi_in, perms, vals):
    layers, _, n = blocks.shape
    dim = psi_in.shape[0]
    phi = psi_in.copy()
    tmp = np.empty_like(phi)
    for l in range(layers):
        for col in range(2):
            for j in range(n):
                _rot(phi, j, blocks[l, col, j], col, 1.0)
        _rz_column(phi, blocks[l, 2], 1.0)
        for t in range(dim):
            tmp[t] = phi[src[t]]
        phi[:] = tmp
    lam = np.zeros_like(phi)
    for g in range(perms.shape[0]):
        for t in range(dim):
            k = perms[g, t]
            lam[t] += vals[g, k] * phi[k]
    energy = 0.0
    for t in range(dim):
        energy += (np.conj(phi[t]) * lam[t]).real
    grad = np.empty((layers, 3, n))
    for l in range(layers - 1, -1, -1):
        for t in range(dim):
            tmp[t] = phi[inv[t]]
        phi[:] = tmp
        for t in range(dim):
            tmp[t] = lam[inv[t]]
        lam[:] = tmp
        for j in range(n):
            acc = 0.0
            for t in range(dim):
                w = (np.conj(lam[t]) * phi[t]).imag
                acc += -w if (t >> j) & 1 else w
            grad[l, 2, j] = acc
        _rz_column(phi, blocks[l, 2], -1.0)
        _rz_column(lam, blocks[l, 2], -1.0)
        for col in range(1, -1, -1):
            for j in range(n - 1, -1, -1):
                step = 1 << j
                acc = 0j
                for i in range(dim):
                    if i & step:
                        continue
                    l0, l1 = lam[i], lam[i | step]
                    p0, p1 = phi[i], phi[i | step]
                    if col == 0:
                        acc += np.conj(l0) * p1 + np.conj(l1) * p0
                    else:
                        acc += -1j * np.conj(l0) * p1 + 1j * np.conj(l1) * p0
                grad[l, col, j] = acc.imag
                _rot(phi, j, blocks[l, col, j], col, -1.0)
                _rot(lam, j, blocks[l, col, j], col, -1.0)
    return energy, grad


def apply_ansatz(config: AnsatzConfig, params, psi_in=None) -> np.ndarray:
    return AnsatzSimulator(config).run(params, psi_in)


def _measurement_groups(terms: list[PauliTerm]):
    diag = [t for t in terms if t.op.x_mask == 0]
    xonly = [t for t in terms if t.op.z_mask == 0 and t.op.x_mask != 0]
    if len(diag) + len(xonly) != len(terms):
        raise ConfigError("shot estimation supports only all-Z and all-X Pauli terms")
    return diag, xonly


def _hadamard_all(psi: np.ndarray) -> np.ndarray:
    n = psi.shape[0].bit_length() - 1
    r = 1 / math.sqrt(2)
    state = psi[None, :]
    one = np.ones(1)
    for j in range(n):
        state = _rotate(state, j, r * one, r * one, r * one, -r * one)
    return state[0]


def shots_energy(psi: np.ndarray, terms: list[PauliTerm], shots: int, rng: np.random.Generator):
    """Estimate ``<H>`` from ``shots`` computational-basis and ``shots`` X-basis samples.

    Returns ``(mean, standard_error)``.
    """
    if shots < 1:
        raise ConfigError("shots must be >= 1")
    n = psi.shape[0].bit_length() - 1
    mean, var = 0.0, 0.0
    for group, state in zip(_measurement_groups(terms), (psi, None)):
        if not group:
            continue
        if state is None:
            state = _hadamard_all(psi)
        probs = np.abs(state) ** 2
        probs /= probs.sum()
        outcomes = rng.choice(probs.shape[0], size=shots, p=probs)
        sig = spins(outcomes, n)
        vals = np.zeros(shots)
        for t in group:
            mask = t.op.z_mask | t.op.x_mask
            sites = [j for j in range(n) if (mask >> j) & 1]
            vals += t.coefficient * np.prod(sig[:, sites], axis=1)
        mean += vals.mean()
        var += vals.var(ddof=1) / shots if shots > 1 else 0.0
    return float(mean), math.sqrt(var)


def vqe_energy(config: AnsatzConfig, params, terms, mode="exact", shots=None, seed=None, psi_in=None) -> float:
    """Energy of the ansatz output, exactly or from sampled measurements."""
    psi = apply_ansatz(config, params, psi_in)
    if mode == "exact":
        return float(TermOperator(terms).expectation(psi))
    if mode == "shots":
        if not shots:
            raise ConfigError("shots mode needs shots >= 1")
        return shots_energy(psi, terms, shots, np.random.default_rng(seed))[0]
    raise ConfigError(f"unknown mode {mode!r}")


class _EnergyModel:
    def __init__(self, config: AnsatzConfig, terms: list[PauliTerm], psi_in=None):
        self.sim = AnsatzSimulator(config)
        self.op = TermOperator(terms)
        self.terms = terms
        self.psi_in = psi_in

    def energies(self, angles: np.ndarray) -> np.ndarray:
        return self.op.expectation(self.sim.run(angles, self.psi_in))

    def shift_gradient(self, angles: np.ndarray) -> tuple[np.ndarray, float]:
        """Parameter-shift gradient plus the unshifted energy, from one batched run."""
        P = angles.shape[0]
        shifted = np.repeat(angles[None, :], 2 * P + 1, axis=0)
        k = np.arange(P)
        shifted[k, k] += math.pi / 2
        shifted[P + k, k] -= math.pi / 2
        e = self.energies(shifted)
        return (e[:P] - e[P : 2 * P]) / 2.0, float(e[-1])


def parameter_shift_gradient(config: AnsatzConfig, params, terms, psi_in=None) -> np.ndarray:
    """``dE/dtheta_k = (E(theta_k + pi/2) - E(theta_k - pi/2)) / 2`` with exact energies."""
    grad, _ = _EnergyModel(config, terms, psi_in).shift_gradient(np.asarray(params, dtype=float))
    return grad


@dataclass
class VqeRun:
    params: np.ndarray
    energy: float
    epochs: int
    converged: bool
    history: list


def _inner_converged(history, window, tol) -> bool:
    if len(history) < window:
        return False
    tail = history[-window:]
    return max(tail) - min(tail) <= tol


def _train_once(em: _EnergyModel, init: np.ndarray, tc: VqeTrainConfig, rng) -> VqeRun:
    angles = init.copy()
    adam = Adam(tc.learning_rate)
    history = []
    converged = False
    for _ in range(tc.max_epochs):
        if tc.gradient == "adjoint":
            e_exact, grad = em.sim.energy_and_gradient(angles, em.op, em.psi_in)
        else:
            grad, e_exact = em.shift_gradient(angles)
        if tc.expectation_mode == "shots":
            e = shots_energy(em.sim.run(angles, em.psi_in), em.terms, tc.shots, rng)[0]
        else:
            e = e_exact
        history.append(e)
        if _inner_converged(history, tc.inner_window, tc.inner_tol):
            converged = True
            break
        angles = angles - adam.step(grad)
    energy = float(em.energies(angles[None, :])[0])
    return VqeRun(angles, energy, len(history), converged, history)


@dataclass
class VqeResult:
    params: np.ndarray
    energy: float
    converged: bool
    runs: list

    @property
    def diagnostics(self) -> dict:
        return {
            "restarts": len(self.runs),
            "epochs": [r.epochs for r in self.runs],
            "run_energies": [r.energy for r in self.runs],
            "inner_converged": [r.converged for r in self.runs],
        }


def train_vqe(model: TfimModel, ansatz: AnsatzConfig | None = None,
              train_config: VqeTrainConfig | None = None, psi_in=None) -> VqeResult:
    """Adam on exact energy gradients with a restart-agreement check.

    Each run stops when ``inner_window`` consecutive energies agree within
    ``inner_tol``.  The circuit is then re-initialized and retrained until two
    successive runs agree within ``restart_tol`` (relative); the lower of the
    two is returned.  If restarts run out, the best run is returned with
    ``converged=False``.

    With ``zero_first`` the first run starts from all-zero angles, so the
    circuit initially outputs ``psi_in``; restarts draw angles uniformly from
    ``[-init_scale, init_scale]``.  Gradients come from the adjoint pass
    unless ``gradient="parameter_shift"``; both are exact.
    """
    model = check_model(model)
    ansatz = ansatz or AnsatzConfig(model.n)
    tc = train_config or VqeTrainConfig()
    if ansatz.n != model.n:
        raise DimensionError("ansatz and model disagree on n")
    rng = np.random.default_rng(tc.seed)
    em = _EnergyModel(ansatz, tfim_terms(model), psi_in)
    runs: list[VqeRun] = []
    for attempt in range(tc.max_restarts + 1):
        # the first run starts from the identity circuit, later runs from random angles
        if attempt == 0 and tc.zero_first:
            init = np.zeros(ansatz.n_params)
        else:
            init = rng.uniform(-tc.init_scale, tc.init_scale, size=ansatz.n_params)
        runs.append(_train_once(em, init, tc, rng))
        if len(runs) >= 2 and relative_change(runs[-2].energy, runs[-1].energy) <= tc.restart_tol:
            best = min(runs[-2:], key=lambda r: r.energy)
            return VqeResult(best.params, best.energy, True, runs)
    best = min(runs, key=lambda r: r.energy)
    return VqeResult(best.params, best.energy, False, runs)


def save_circuit(path, ansatz: AnsatzConfig, angles, seed: int, energy: float, converged: bool) -> None:
    blob = {
        "n": ansatz.n,
        "layers": ansatz.layers,
        "entangler": ansatz.entangler,
        "angles": [float(a) for a in angles],
        "seed": int(seed),
        "energy": float(energy),
        "converged": bool(converged),
    }
    atomic_write_text(path, json.dumps(blob))


def load_circuit(path) -> tuple[AnsatzConfig, np.ndarray, dict]:
    with open(path) as fh:
        blob = json.load(fh)
    ansatz = AnsatzConfig(blob["n"], blob["layers"], blob["entangler"])
    angles = np.asarray(blob["angles"], dtype=float)
    if angles.shape != (ansatz.n_params,):
        raise DimensionError("angle count does not match the ansatz")
    return ansatz, angles, {k: blob[k] for k in ("seed", "energy", "converged")}


class VQESolver(BaseEstimator):
    """Layered-ansatz VQE trained with Adam on exact energy gradients.

    Parameters
    ----------
    layers : int
    entangler : {"all_pairs_lex", "chain"}
    expectation_mode : {"exact", "shots"}
    init_scale : float
        Restart angles are uniform in ``[-init_scale, init_scale]``.
    gradient : {"adjoint", "parameter_shift"}
        Both give the exact gradient; the adjoint pass is much cheaper.
    """

    def __init__(
        self,
        layers=4,
        entangler="all_pairs_lex",
        learning_rate=0.05,
        inner_tol=1e-6,
        inner_window=3,
        restart_tol=1e-4,
        max_restarts=5,
        max_epochs=5000,
        expectation_mode="exact",
        shots=1000,
        init_scale=math.pi,
        zero_first=True,
        gradient="adjoint",
        seed=0,
    ):
        self.layers = layers
        self.entangler = entangler
        self.learning_rate = learning_rate
        self.inner_tol = inner_tol
        self.inner_window = inner_window
        self.restart_tol = restart_tol
        self.max_restarts = max_restarts
        self.max_epochs = max_epochs
        self.expectation_mode = expectation_mode
        self.shots = shots
        self.init_scale = init_scale
        self.zero_first = zero_first
        self.gradient = gradient
        self.seed = seed

    def fit(self, model, y=None):
        model = check_model(model)
        self.ansatz_ = AnsatzConfig(model.n, self.layers, self.entangler)
        tc = VqeTrainConfig(
            learning_rate=self.learning_rate,
            inner_tol=self.inner_tol,
            inner_window=self.inner_window,
            restart_tol=self.restart_tol,
            max_restarts=self.max_restarts,
            max_epochs=self.max_epochs,
            expectation_mode=self.expectation_mode,
            shots=self.shots,
            seed=self.seed,
            init_scale=self.init_scale,
            zero_first=self.zero_first,
            gradient=self.gradient,
        )
        res = train_vqe(model, self.ansatz_, tc)
        self.params_ = res.params
        self.state_ = apply_ansatz(self.ansatz_, res.params)
        self.energy_ = res.energy
        self.converged_ = res.converged
        self.diagnostics_ = res.diagnostics
        return self

    def metadata(self) -> dict:
        return dict(self.diagnostics_)
