"""Two-site DMRG for the transverse-field Ising chain.

MPS site tensors are ``(left, phys, right)`` and MPO site tensors
``(left, phys_out, phys_in, right)``.  Physical index 0 is spin up
(``Z = +1``), matching bit 0 of the statevector convention in
:mod:`magicbench.core`.  Periodic chains are handled by an extra MPO channel
that carries ``Z`` from the first site to the last, so the sweep itself is the
usual open-chain one.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from sklearn.base import BaseEstimator

from ._io import atomic_write_bytes
from .core import TfimModel
from .errors import CapabilityError, ConfigError, DimensionError, NumericalError
from .validation import check_model

MPS_MAX_QUBITS = 14
CANONICAL_TOL = 1e-10

_I = np.eye(2)
_X = np.array([[0.0, 1.0], [1.0, 0.0]])
_Z = np.array([[1.0, 0.0], [0.0, -1.0]])


@dataclass
class Mps:
    tensors: list
    center: int = 0

    @property
    def n(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        """Dimensions of the ``n + 1`` bonds, boundaries included."""
        return [self.tensors[0].shape[0]] + [t.shape[2] for t in self.tensors]

    def copy(self) -> Mps:
        return Mps([t.copy() for t in self.tensors], self.center)

    def norm(self) -> float:
        env = np.ones((1, 1))
        for a in self.tensors:
            env = np.einsum("pq,psa,qsb->ab", env, a.conj(), a)
        return math.sqrt(abs(env[0, 0]))


@dataclass
class Mpo:
    tensors: list

    @property
    def n(self) -> int:
        return len(self.tensors)

    @property
    def bond_dims(self) -> list[int]:
        return [self.tensors[0].shape[0]] + [w.shape[3] for w in self.tensors]


@dataclass(frozen=True)
class DmrgConfig:
    max_bond: int = 32
    svd_cutoff: float = 1e-12
    max_sweeps: int = 50
    energy_tol: float = 1e-10
    local_solver_iters: int = 30
    local_solver_tol: float = 1e-12
    init_bond: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.max_bond < 2:
            raise ConfigError("max_bond must be >= 2")
        if not self.energy_tol > 0:
            raise ConfigError("energy_tol must be > 0")
        if self.svd_cutoff < 0:
            raise ConfigError("svd_cutoff must be >= 0")
        if self.max_sweeps < 1 or self.local_solver_iters < 2:
            raise ConfigError("max_sweeps must be >= 1 and local_solver_iters >= 2")


def _site_ops(w: np.ndarray, entries) -> np.ndarray:
    for (r, c), op in entries.items():
        w[r, :, :, c] = op
    return w


def build_tfim_mpo(model: TfimModel) -> Mpo:
    """MPO of ``J sum Z_i Z_{i+1} - h sum X_i``.

    Open chains use the bond-dimension-3 automaton (start, Z pending, done);
    periodic chains add a channel holding ``Z_0`` until the last site.
    """
    model = check_model(model)
    n, J, h = model.n, model.J, model.h
    if n == 1:
        return Mpo([(-h * _X)[None, :, :, None]])
    if model.periodic:
        # channels: 0 start, 1 Z pending (nearest neighbour), 2 Z_0 pending, 3 done
        k = 4
        bulk = {(0, 0): _I, (0, 1): _Z, (0, 3): -h * _X, (1, 3): J * _Z, (2, 2): _I, (3, 3): _I}
        first = {(0, 0): _I, (0, 1): _Z, (0, 2): _Z, (0, 3): -h * _X}
        last = {(0, 0): -h * _X, (1, 0): J * _Z, (2, 0): J * _Z, (3, 0): _I}
    else:
        k = 3
        bulk = {(0, 0): _I, (0, 1): _Z, (0, 2): -h * _X, (1, 2): J * _Z, (2, 2): _I}
        first = {(0, 0): _I, (0, 1): _Z, (0, 2): -h * _X}
        last = {(0, 0): -h * _X, (1, 0): J * _Z, (2, 0): _I}
    tensors = [_site_ops(np.zeros((1, 2, 2, k)), first)]
    tensors += [_site_ops(np.zeros((k, 2, 2, k)), bulk) for _ in range(n - 2)]
    tensors.append(_site_ops(np.zeros((k, 2, 2, 1)), last))
    return Mpo(tensors)


def mpo_to_dense(mpo: Mpo) -> np.ndarray:
    """Dense ``2**n x 2**n`` matrix in the little-endian basis (site j = bit j)."""
    n = mpo.n
    if n > 10:
        raise CapabilityError("dense MPO contraction limited to n <= 10")
    acc = mpo.tensors[0][0]  # (out, in, right)
    for w in mpo.tensors[1:]:
        # acc: (out_0..out_k, in_0..in_k, wr) flattened as (O, I, wr)
        acc = np.einsum("oiw,wstv->ositv", acc, w)
        d = acc.shape
        acc = acc.reshape(d[0] * d[1], d[2] * d[3], d[4])
    # row index has site 0 most significant; reverse to make site j bit j
    mat = acc[:, :, 0].reshape((2,) * (2 * n))
    order = list(range(n - 1, -1, -1)) + list(range(2 * n - 1, n - 1, -1))
    return mat.transpose(order).reshape(1 << n, 1 << n)


def _left_qr(a):
    l, d, r = a.shape
    q, rr = np.linalg.qr(a.reshape(l * d, r))
    return q.reshape(l, d, q.shape[1]), rr


def _right_qr(a):
    l, d, r = a.shape
    q, rr = np.linalg.qr(a.reshape(l, d * r).T)
    return q.T.reshape(q.shape[1], d, r), rr.T


def random_mps(n: int, bond: int, rng: np.random.Generator, dtype=float) -> Mps:
    """Random MPS in right-canonical form (center at site 0), normalized."""
    dims = [min(bond, 2**k, 2 ** (n - k)) for k in range(n + 1)]
    tensors = [rng.normal(size=(dims[k], 2, dims[k + 1])).astype(dtype) for k in range(n)]
    for k in range(n - 1, 0, -1):
        q, r = _right_qr(tensors[k])
        tensors[k] = q
        tensors[k - 1] = np.einsum("lsr,rq->lsq", tensors[k - 1], r)
    tensors[0] /= np.linalg.norm(tensors[0])
    return Mps(tensors, 0)


def basis_mps(n: int, bits: int = 0) -> Mps:
    """Bond-dimension-1 MPS of a computational basis state."""
    tensors = []
    for j in range(n):
        t = np.zeros((1, 2, 1))
        t[0, (bits >> j) & 1, 0] = 1.0
        tensors.append(t)
    return Mps(tensors, 0)


def is_canonical(mps: Mps, tol: float = CANONICAL_TOL) -> bool:
    """Left-orthonormal left of the center, right-orthonormal to its right."""
    for k, a in enumerate(mps.tensors):
        if k < mps.center:
            g = np.einsum("lsr,lsq->rq", a.conj(), a)
        elif k > mps.center:
            g = np.einsum("lsr,qsr->lq", a.conj(), a)
        else:
            continue
        if not np.allclose(g, np.eye(g.shape[0]), atol=tol, rtol=0):
            return False
    return True


def mps_statevector(mps: Mps) -> np.ndarray:
    n = mps.n
    if n > MPS_MAX_QUBITS:
        raise CapabilityError(f"dense MPS contraction limited to n <= {MPS_MAX_QUBITS}")
    acc = mps.tensors[0][0]  # (phys, right)
    for a in mps.tensors[1:]:
        acc = np.tensordot(acc, a, axes=([-1], [0]))
    psi = acc.reshape((2,) * n).transpose(range(n - 1, -1, -1)).reshape(-1)
    norm = np.linalg.norm(psi)
    if norm == 0:
        raise NumericalError("MPS has zero norm")
    return (psi / norm).astype(complex)


def _grow_left(L, a, w):
    t = np.tensordot(L, a, axes=([2], [0]))  # (p, w, t, b)
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))  # (p, b, s, v)
    t = np.tensordot(a.conj(), t, axes=([0, 1], [0, 2]))  # (a, b, v)
    return t.transpose(0, 2, 1)  # (bra, mpo, ket)


def _grow_right(R, a, w):
    t = np.tensordot(a, R, axes=([2], [2]))  # (q, t, a', v)
    t = np.tensordot(w, t, axes=([2, 3], [1, 3]))  # (w, s, q, a')
    t = np.tensordot(a.conj(), t, axes=([1, 2], [1, 3]))  # (p, w, q)
    return t


class _TwoSiteOperator:
    def __init__(self, L, W1, W2, R):
        self.L, self.W1, self.W2, self.R = L, W1, W2, R

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        t = np.tensordot(self.L, theta, axes=([2], [0]))  # p w T X b
        t = np.tensordot(t, self.W1, axes=([1, 2], [0, 2]))  # p X b S v
        t = np.tensordot(t, self.W2, axes=([4, 1], [0, 2]))  # p b S U u
        t = np.tensordot(t, self.R, axes=([1, 4], [2, 1]))  # p S U a
        return t


def lanczos_ground(matvec, v0: np.ndarray, max_iter: int, tol: float):
    """Lowest Ritz pair of a Hermitian operator from a Krylov space seeded at ``v0``.

    Full reorthogonalization; stops when the residual norm drops below ``tol``.
    Returns ``(energy, vector, residual)``.
    """
    shape = v0.shape
    v = v0.ravel().astype(np.result_type(v0, float))
    nv = np.linalg.norm(v)
    if nv == 0:
        raise NumericalError("Lanczos start vector is zero")
    basis = [v / nv]
    alphas, betas = [], []
    energy, vec, resid = None, None, math.inf
    for it in range(max_iter):
        w = matvec(basis[-1].reshape(shape)).ravel()
        alpha = float(np.vdot(basis[-1], w).real)
        alphas.append(alpha)
        for q in basis:
            w = w - np.vdot(q, w) * q
        beta = float(np.linalg.norm(w))
        evals, evecs = eigh_tridiagonal(np.array(alphas), np.array(betas), select="i", select_range=(0, 0))
        energy = float(evals[0])
        coeffs = evecs[:, 0]
        resid = abs(beta * coeffs[-1])
        if resid < tol or beta < 1e-14 or it == max_iter - 1:
            break
        betas.append(beta)
        basis.append(w / beta)
    vec = sum(c * q for c, q in zip(coeffs, basis))
    vec /= np.linalg.norm(vec)
    return energy, vec.reshape(shape), resid


def _split(theta, max_bond, cutoff, move_right):
    l, d1, d2, r = theta.shape
    u, s, vh = np.linalg.svd(theta.reshape(l * d1, d2 * r), full_matrices=False)
    if not np.all(np.isfinite(s)):
        raise NumericalError("SVD produced non-finite singular values")
    weight = s**2 / np.sum(s**2)
    # tail[k] = weight discarded when keeping k values
    tail = np.concatenate([np.cumsum(weight[::-1])[::-1], [0.0]])
    keep = int(np.argmax(tail <= cutoff))
    keep = max(1, min(keep, max_bond))
    discarded = float(tail[keep])
    u, s, vh = u[:, :keep], s[:keep], vh[:keep]
    s = s / np.linalg.norm(s)
    if move_right:
        a = u.reshape(l, d1, keep)
        b = (s[:, None] * vh).reshape(keep, d2, r)
    else:
        a = (u * s[None, :]).reshape(l, d1, keep)
        b = vh.reshape(keep, d2, r)
    return a, b, discarded


@dataclass
class DmrgDiagnostics:
    sweep_energies: list = field(default_factory=list)
    max_discarded: list = field(default_factory=list)
    max_residual: list = field(default_factory=list)
    converged: bool = False
    non_monotonic: bool = False

    @property
    def sweeps(self) -> int:
        return len(self.sweep_energies)


def dmrg_ground_state(mpo: Mpo, config: DmrgConfig | None = None, init: Mps | None = None):
    """Two-site DMRG.  Returns ``(energy, mps, diagnostics)``.

    Each full sweep goes left to right and back.  Iteration stops when two
    successive sweeps agree within ``energy_tol`` or after ``max_sweeps``.
    The returned MPS has its orthogonality center at site 0.
    """
    cfg = config or DmrgConfig()
    n = mpo.n
    dtype = np.result_type(*mpo.tensors)
    if init is None:
        mps = random_mps(n, min(cfg.max_bond, cfg.init_bond), np.random.default_rng(cfg.seed), dtype)
    else:
        if init.n != n:
            raise DimensionError("initial MPS and MPO disagree on n")
        mps = init.copy()
        for k in range(n - 1, 0, -1):
            q, r = _right_qr(mps.tensors[k])
            mps.tensors[k] = q
            mps.tensors[k - 1] = np.einsum("lsr,rq->lsq", mps.tensors[k - 1], r)
        mps.tensors[0] /= np.linalg.norm(mps.tensors[0])
        mps.center = 0
    A, W = mps.tensors, mpo.tensors
    if n == 1:
        h = W[0][0, :, :, 0]
        evals, evecs = np.linalg.eigh(h)
        A[0] = evecs[:, 0].reshape(1, 2, 1).astype(dtype)
        diag = DmrgDiagnostics([float(evals[0])], [0.0], [0.0], True)
        return float(evals[0]), mps, diag

    left = [None] * (n + 1)
    right = [None] * (n + 1)
    left[0] = np.ones((1, 1, 1), dtype=dtype)
    right[n] = np.ones((1, 1, 1), dtype=dtype)
    for k in range(n - 1, 1, -1):
        right[k] = _grow_right(right[k + 1], A[k], W[k])

    diag = DmrgDiagnostics()
    energy = math.inf
    prev = math.inf
    for _ in range(cfg.max_sweeps):
        disc, res = 0.0, 0.0
        bonds = [(k, True) for k in range(n - 1)] + [(k, False) for k in range(n - 2, -1, -1)]
        for k, move_right in bonds:
            theta = np.tensordot(A[k], A[k + 1], axes=([2], [0]))
            op = _TwoSiteOperator(left[k], W[k], W[k + 1], right[k + 2])
            energy, theta, r = lanczos_ground(op, theta, cfg.local_solver_iters, cfg.local_solver_tol)
            res = max(res, r)
            A[k], A[k + 1], d = _split(theta, cfg.max_bond, cfg.svd_cutoff, move_right)
            disc = max(disc, d)
            if move_right:
                left[k + 1] = _grow_left(left[k], A[k], W[k])
            else:
                right[k + 1] = _grow_right(right[k + 2], A[k + 1], W[k + 1])
        diag.sweep_energies.append(energy)
        diag.max_discarded.append(disc)
        diag.max_residual.append(res)
        if energy > prev + 1e-12 * max(1.0, abs(prev)):
            diag.non_monotonic = True
        if abs(energy - prev) < cfg.energy_tol:
            diag.converged = True
            break
        prev = energy
    mps.center = 0
    return float(energy), mps, diag


def save_mps(path, mps: Mps) -> None:
    """JSON header line followed by the raw tensors in site order."""
    dtype = np.result_type(*mps.tensors)
    header = {
        "format": "magicbench-mps",
        "version": 1,
        "n": mps.n,
        "bond_dims": mps.bond_dims,
        "center": mps.center,
        "dtype": np.dtype(dtype).str,
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header).encode() + b"\n")
    for t in mps.tensors:
        buf.write(np.ascontiguousarray(t, dtype=dtype).tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_mps(path) -> Mps:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    if header.get("format") != "magicbench-mps":
        raise ValueError("not a magicbench MPS file")
    dtype = np.dtype(header["dtype"])
    dims = header["bond_dims"]
    tensors, offset = [], 0
    for k in range(header["n"]):
        shape = (dims[k], 2, dims[k + 1])
        count = int(np.prod(shape))
        t = np.frombuffer(payload, dtype=dtype, count=count, offset=offset).reshape(shape)
        tensors.append(t.copy())
        offset += count * dtype.itemsize
    if offset != len(payload):
        raise ValueError("MPS payload size does not match its header")
    return Mps(tensors, header["center"])


class DMRGSolver(BaseEstimator):
    """Two-site DMRG ground state of a TFIM chain.

    Parameters
    ----------
    max_bond : int
        Bond dimension cap ``D``.
    svd_cutoff : float
        Largest discarded weight allowed per split.
    """

    def __init__(self, max_bond=32, svd_cutoff=1e-12, max_sweeps=50, energy_tol=1e-10,
                 local_solver_iters=30, seed=0):
        self.max_bond = max_bond
        self.svd_cutoff = svd_cutoff
        self.max_sweeps = max_sweeps
        self.energy_tol = energy_tol
        self.local_solver_iters = local_solver_iters
        self.seed = seed

    def fit(self, model, y=None):
        model = check_model(model)
        cfg = DmrgConfig(
            max_bond=self.max_bond,
            svd_cutoff=self.svd_cutoff,
            max_sweeps=self.max_sweeps,
            energy_tol=self.energy_tol,
            local_solver_iters=self.local_solver_iters,
            seed=self.seed,
        )
        self.energy_, self.mps_, self.diagnostics_ = dmrg_ground_state(build_tfim_mpo(model), cfg)
        self.state_ = mps_statevector(self.mps_) if model.n <= MPS_MAX_QUBITS else None
        self.converged_ = self.diagnostics_.converged
        return self

    def metadata(self) -> dict:
        d = self.diagnostics_
        return {
            "sweeps": d.sweeps,
            "bond_dims": self.mps_.bond_dims,
            "max_discarded": max(d.max_discarded, default=0.0),
            "non_monotonic": d.non_monotonic,
        }
