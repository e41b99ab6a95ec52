"""Exact diagonalization of the TFIM.

Dense ``eigh`` handles ``n <= 10``; above that an ARPACK Lanczos run on a
matrix-free operator built from the Pauli term list is used.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh
from sklearn.base import BaseEstimator

from ._io import atomic_write_text
from .core import PauliTerm, TfimModel, popcount, tfim_terms
from .errors import CapabilityError, ConvergenceError, NumericalError
from .validation import check_model

DENSE_MAX_QUBITS = 10
ED_MAX_QUBITS = 14
DEGENERACY_TOL = 1e-10
RESIDUAL_TOL = 1e-10
LANCZOS_TOL = 1e-12
START_SEED = 20240501


def _grouped_terms(terms: list[PauliTerm]) -> list[tuple[int, np.ndarray]]:
    """Per distinct x_mask, the vector ``v`` with ``(H psi)[s ^ x] += v[s] psi[s]``."""
    n = terms[0].op.n
    idx = np.arange(1 << n, dtype=np.int64)
    groups: dict[int, np.ndarray] = defaultdict(lambda: np.zeros(1 << n, dtype=complex))
    for t in terms:
        signs = 1 - 2 * (popcount(idx & t.op.z_mask) & 1)
        groups[t.op.x_mask] = groups[t.op.x_mask] + t.coefficient * t.op.phase * signs
    out = []
    for x in sorted(groups):
        v = groups[x]
        if np.all(v.imag == 0):
            v = v.real.copy()
        out.append((x, v))
    return out


class TermOperator:
    """Matrix-free ``H = sum_k c_k P_k`` acting on vectors or stacks of vectors."""

    def __init__(self, terms: list[PauliTerm]):
        if not terms:
            raise ValueError("empty term list")
        self.n = terms[0].op.n
        self.dim = 1 << self.n
        idx = np.arange(self.dim, dtype=np.int64)
        self._groups = [(idx ^ x, v) for x, v in _grouped_terms(terms)]
        self.is_real = all(np.isrealobj(v) for _, v in self._groups)
        self._tables = None

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Apply along the last axis."""
        out = np.zeros(psi.shape, dtype=np.result_type(psi.dtype, float))
        if not self.is_real:
            out = out.astype(complex)
        for perm, v in self._groups:
            # (H psi)[s ^ x] += v[s] psi[s]  <=>  (H psi)[t] += v[t ^ x] psi[t ^ x]
            out += (v * psi)[..., perm]
        return out

    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(perm, v)`` pairs as complex arrays, for compiled kernels."""
        if self._tables is None:
            perms = np.stack([p for p, _ in self._groups])
            vals = np.stack([np.asarray(v, dtype=complex) for _, v in self._groups])
            self._tables = (perms, vals)
        return self._tables

    def expectation(self, psi: np.ndarray) -> np.ndarray:
        """Normalized ``<psi|H|psi>`` along the last axis."""
        hpsi = self.apply(psi)
        num = np.sum(np.conj(psi) * hpsi, axis=-1).real
        return num / np.sum(np.abs(psi) ** 2, axis=-1)

    def as_linear_operator(self) -> LinearOperator:
        dtype = float if self.is_real else complex
        return LinearOperator(
            (self.dim, self.dim), matvec=lambda v: self.apply(np.ravel(v)), dtype=dtype
        )


def sparse_hamiltonian(terms: list[PauliTerm]) -> sp.csr_matrix:
    n = terms[0].op.n
    idx = np.arange(1 << n, dtype=np.int64)
    rows, cols, vals = [], [], []
    for x, v in _grouped_terms(terms):
        keep = v != 0
        rows.append((idx ^ x)[keep])
        cols.append(idx[keep])
        vals.append(v[keep])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(1 << n, 1 << n),
    )


def dense_hamiltonian(model: TfimModel) -> np.ndarray:
    """Real symmetric ``2**n x 2**n`` matrix of the model."""
    model = check_model(model)
    if model.n > ED_MAX_QUBITS:
        raise CapabilityError(
            f"dense Hamiltonian limited to n <= {ED_MAX_QUBITS}; "
            "use TermOperator for matrix-free application"
        )
    dim = 1 << model.n
    idx = np.arange(dim, dtype=np.int64)
    H = np.zeros((dim, dim))
    for x, v in _grouped_terms(tfim_terms(model)):
        H[idx ^ x, idx] += np.real(v)
    return H


@dataclass(frozen=True)
class EDResult:
    energy: float
    state: np.ndarray
    gap: float
    degenerate: bool
    solver: str
    residual: float


def parity_flip(psi: np.ndarray) -> np.ndarray:
    """Apply ``X`` on every qubit (the global spin flip)."""
    return psi[..., ::-1]


def _fix_phase(psi: np.ndarray) -> np.ndarray:
    overlap = psi.sum()
    if abs(overlap) > 1e-8 * np.sqrt(psi.shape[0]):
        phase = overlap / abs(overlap)
    else:
        k = int(np.argmax(np.abs(psi)))
        phase = psi[k] / abs(psi[k])
    out = psi / phase
    return out.real.astype(complex) if np.allclose(out.imag, 0, atol=1e-14) else out


def _lowest_two_dense(model: TfimModel):
    w, v = np.linalg.eigh(dense_hamiltonian(model))
    return w[:2], v[:, :2]


def _lowest_two_lanczos(model: TfimModel, op: TermOperator):
    rng = np.random.default_rng(START_SEED)
    v0 = rng.normal(size=op.dim) * 0.1
    v0[0] += 1.0
    maxiter = 100 * op.dim
    try:
        w, v = eigsh(
            op.as_linear_operator(), k=2, which="SA", v0=v0, tol=LANCZOS_TOL, maxiter=maxiter
        )
    except ArpackNoConvergence as exc:
        raise ConvergenceError(
            f"Lanczos did not converge within {maxiter} iterations for {model}"
        ) from exc
    order = np.argsort(w)
    return w[order], v[:, order]


def solve_ed(model: TfimModel, solver: str = "auto") -> EDResult:
    """Ground state with deterministic representative choice.

    When the two lowest levels are closer than ``DEGENERACY_TOL`` the state is
    projected onto the even sector of the global spin flip.  The global phase
    is fixed so the overlap with ``|+...+>`` is positive.
    """
    model = check_model(model)
    if model.n > ED_MAX_QUBITS:
        raise CapabilityError(f"exact diagonalization limited to n <= {ED_MAX_QUBITS}")
    if solver == "auto":
        solver = "dense" if model.n <= DENSE_MAX_QUBITS else "lanczos"
    op = TermOperator(tfim_terms(model))
    if model.n == 1:
        solver = "dense"
    if solver == "dense":
        w, v = _lowest_two_dense(model)
    elif solver == "lanczos":
        w, v = _lowest_two_lanczos(model, op)
    else:
        raise ValueError(f"unknown solver {solver!r}")

    energy = float(w[0])
    gap = float(w[1] - w[0]) if len(w) > 1 else np.inf
    degenerate = gap < DEGENERACY_TOL
    psi = v[:, 0].astype(complex)
    if degenerate:
        cands = [(c + parity_flip(c)) / 2 for c in (v[:, 0], v[:, 1])]
        psi = max(cands, key=np.linalg.norm).astype(complex)
    psi = _fix_phase(psi / np.linalg.norm(psi))
    residual = float(np.linalg.norm(op.apply(psi) - energy * psi))
    if residual > RESIDUAL_TOL * max(1.0, abs(energy)):
        raise NumericalError(f"ED residual {residual:.3e} exceeds tolerance")
    return EDResult(energy, psi, gap, degenerate, solver, residual)


def ground_state_ed(model: TfimModel, solver: str = "auto") -> tuple[float, np.ndarray]:
    res = solve_ed(model, solver)
    return res.energy, res.state


class ExactSolver(BaseEstimator):
    """Estimator wrapper around :func:`solve_ed`.

    Parameters
    ----------
    solver : {"auto", "dense", "lanczos"}
    """

    def __init__(self, solver="auto"):
        self.solver = solver

    def fit(self, model, y=None):
        res = solve_ed(check_model(model), self.solver)
        self.energy_ = res.energy
        self.state_ = res.state
        self.gap_ = res.gap
        self.degenerate_ = res.degenerate
        self.solver_ = res.solver
        self.converged_ = True
        return self

    def metadata(self) -> dict:
        return {"gap": self.gap_, "degenerate": bool(self.degenerate_), "solver": self.solver_}


# -- golden reference cache -------------------------------------------------

GOLDEN_VERSION = 1


def _golden_key(n, J, h, periodic) -> str:
    return f"{int(n)}|{float(J)!r}|{float(h)!r}|{bool(periodic)}"


class GoldenCache:
    """Versioned JSON store of reference energies and magic keyed by (n, J, h, boundary)."""

    def __init__(self, path):
        self.path = Path(path)
        self.entries: dict[str, dict] = {}
        if self.path.exists():
            data = json.loads(self.path.read_text())
            if data.get("version") != GOLDEN_VERSION:
                raise ValueError(f"golden cache version {data.get('version')} unsupported")
            for e in data["entries"]:
                self.entries[_golden_key(e["n"], e["J"], e["h"], e["periodic"])] = e

    def get(self, model: TfimModel) -> dict | None:
        return self.entries.get(_golden_key(model.n, model.J, model.h, model.periodic))

    def put(self, model: TfimModel, energy: float, m2: float) -> dict:
        entry = {
            "n": int(model.n),
            "J": float(model.J),
            "h": float(model.h),
            "periodic": bool(model.periodic),
            "energy": float(energy),
            "m2": float(m2),
        }
        self.entries[_golden_key(model.n, model.J, model.h, model.periodic)] = entry
        return entry

    def save(self) -> None:
        payload = {"version": GOLDEN_VERSION, "entries": [self.entries[k] for k in sorted(self.entries)]}
        atomic_write_text(self.path, json.dumps(payload, indent=1, sort_keys=True) + "\n")
