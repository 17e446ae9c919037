"""Brute-force reference in the full 2^N qubit space.

Conventions: qubit 1 is the most significant bit of the basis index,
``|g> = 0`` and ``|e> = 1``, so ``sigma_-`` lowers bit values 1 -> 0.
Density matrices are vectorised by column stacking.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import DOP853
from scipy.optimize import brentq
from scipy.sparse.linalg import expm_multiply

from .core.coupling import CouplingModel, build_gamma_waveguide, eigen_channels, with_hamiltonian
from .core.partition import Spacing, SuperspinPartition, build_partition
from .core.state import SuperspinState, layout_for
from .errors import (InvalidModelError, NumericalStateError, PreconditionError,
                     UnsupportedSectorError)
from .evolution import IntegratorConfig, ObservableSeries

DENSITY_GUARD = 10
TRAJECTORY_GUARD = 16


def _guard(N, limit, allow_large, what, hint=""):
    if N <= limit:
        return
    if not allow_large:
        raise PreconditionError(f"{what} limited to N <= {limit} (got N={N}){hint}; "
                                "pass allow_large=True to override")
    warnings.warn(f"{what} at N={N} exceeds the desk-scale guard N <= {limit}", RuntimeWarning,
                  stacklevel=3)


# ---------------------------------------------------------------------------
# site operators
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def excitation_numbers(N: int) -> np.ndarray:
    x = np.arange(2**N)
    return sum((x >> b) & 1 for b in range(N)) if N else np.zeros(1, dtype=int)


def sigma_minus(j: int, N: int) -> sp.csr_matrix:
    """``sigma_-`` on qubit ``j`` (1-based)."""
    if not 1 <= j <= N:
        raise PreconditionError(f"site {j} outside 1..{N}")
    bit = 1 << (N - j)
    x = np.arange(2**N)
    src = x[(x & bit) != 0]
    return sp.csr_matrix((np.ones(src.size), (src ^ bit, src)), shape=(2**N, 2**N))


def sigma_z(j: int, N: int) -> sp.csr_matrix:
    bit = 1 << (N - j)
    x = np.arange(2**N)
    return sp.diags(np.where(x & bit, 1.0, -1.0), format="csr")


def collective_lowering(coeffs) -> sp.csr_matrix:
    """``sum_j c_j sigma_-^j``."""
    coeffs = np.asarray(coeffs)
    N = coeffs.size
    out = sp.csr_matrix((2**N, 2**N), dtype=complex if np.iscomplexobj(coeffs) else float)
    for j, c in enumerate(coeffs, start=1):
        if c != 0:
            out = out + c * sigma_minus(j, N)
    return out.tocsr()


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class OracleModel:
    """Site-resolved master equation.

    ``gamma`` is the N x N dissipative matrix, ``jcoh`` the coherent exchange
    (``H = sum_{i != j} J_ij sigma_+^i sigma_-^j``), ``gamma_local`` an extra
    independent decay rate per qubit. ``signs`` fixes the collective spin
    ``S_- = sum_j s_j sigma_-^j`` used for observables.
    """

    gamma: np.ndarray
    jcoh: Optional[np.ndarray] = None
    gamma_local: float = 0.0
    signs: Optional[np.ndarray] = None
    neg_tol: float = 1e-12

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise PreconditionError("gamma must be a square matrix")
        if not np.allclose(g, g.T, atol=1e-13):
            raise PreconditionError("gamma must be symmetric")
        if self.gamma_local < 0:
            raise PreconditionError("gamma_local must be non-negative")
        self.gamma = g
        if self.jcoh is not None:
            self.jcoh = np.asarray(self.jcoh, dtype=float)
        self.signs = np.ones(self.N) if self.signs is None else np.asarray(self.signs, dtype=float)

    @property
    def N(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def from_coupling(cls, coupling: CouplingModel, include_hamiltonian=False, gamma_local=0.0):
        if include_hamiltonian and coupling.jcoh is None:
            coupling = with_hamiltonian(coupling)
        signs = build_partition(coupling.N, coupling.spacing).site_signs()
        return cls(gamma=coupling.gamma, jcoh=coupling.jcoh if include_hamiltonian else None,
                   gamma_local=gamma_local, signs=signs)

    def channels(self):
        """Rates and coefficient vectors of the collective jump operators.

        Eigenvalues down to ``-neg_tol * N * max|gamma|`` are clamped to zero;
        anything more negative is not a physical rate matrix.
        """
        scale = max(np.abs(self.gamma).max(), 1e-300)
        w, v = np.linalg.eigh(self.gamma)
        if w.min() < -self.neg_tol * self.N * scale:
            raise InvalidModelError(f"rate matrix has negative eigenvalue {w.min():.3g}")
        keep = w > self.neg_tol * self.N * scale
        return w[keep], v[:, keep]

    def operators(self) -> "OracleOperators":
        return OracleOperators(self)


class OracleOperators:
    """Sparse operators of a model in the full space."""

    def __init__(self, model: OracleModel):
        N = model.N
        self.N = N
        self.dim = 2**N
        rates, vecs = model.channels()
        self.jumps = [math.sqrt(r) * collective_lowering(vecs[:, k]) for k, r in enumerate(rates)]
        if model.gamma_local > 0:
            self.jumps += [math.sqrt(model.gamma_local) * sigma_minus(j, N) for j in range(1, N + 1)]
        sm = [sigma_minus(j, N) for j in range(1, N + 1)]
        # bath emission kernel sum_ij G_ij s+^i s-^j, built directly from the matrix
        rate = sp.csr_matrix((self.dim, self.dim))
        for i in range(N):
            for j in range(N):
                if model.gamma[i, j] != 0.0:
                    rate = rate + model.gamma[i, j] * (sm[i].T @ sm[j])
        self.rate = rate.tocsr()
        damping = sum((c.conj().T @ c for c in self.jumps), sp.csr_matrix((self.dim, self.dim)))
        ham = sp.csr_matrix((self.dim, self.dim))
        if model.jcoh is not None:
            for i in range(N):
                for j in range(N):
                    if i != j and model.jcoh[i, j] != 0.0:
                        ham = ham + model.jcoh[i, j] * (sm[i].T @ sm[j])
        self.H = ham.tocsr()
        self.damping = sp.csr_matrix(damping)
        self.heff = (self.H - 0.5j * self.damping).tocsr()
        s_minus = sum((s * m for s, m in zip(model.signs, sm)), sp.csr_matrix((self.dim, self.dim))).tocsr()
        self.S_minus = s_minus
        self.S_plus = s_minus.T.tocsr()
        exc = excitation_numbers(N)
        self.excitations = exc
        self.sz_diag = exc - N / 2.0
        self.S_z = sp.diags(self.sz_diag, format="csr")
        self.transverse = (0.5 * (self.S_plus @ self.S_minus + self.S_minus @ self.S_plus)).tocsr()
        self.S2 = (self.transverse + self.S_z @ self.S_z).tocsr()

    # -- density-matrix form ------------------------------------------------
    def lindblad_rhs(self, rho):
        out = -1j * (self.heff @ rho) + 1j * (self.heff.conj() @ rho.T).T
        for c in self.jumps:
            out += c @ (c.conj() @ rho.T).T
        return out

    def moments(self, rho):
        """``(R, <S_z>, <S^2>, var S_z, <S_x^2 + S_y^2>, populations)`` of a dense rho."""
        diag = np.real(np.diag(rho))
        sz = float(self.sz_diag @ diag)
        sz2 = float(self.sz_diag**2 @ diag)
        pops = np.bincount(self.excitations, weights=diag, minlength=self.N + 1)
        tr = lambda op: float(np.real(np.sum(op.multiply(rho.T))))
        return (tr(self.rate), sz, tr(self.S2), max(sz2 - sz * sz, 0.0), tr(self.transverse), pops)


# ---------------------------------------------------------------------------
# manifold-diagonal sector: the part of Liouville space reached from any
# state without coherences between excitation numbers
# ---------------------------------------------------------------------------

class SectorGenerator:
    """Liouvillian restricted to the blocks ``rho_KK``; dimension ``sum_K C(N, K)^2``."""

    def __init__(self, ops: OracleOperators):
        self.ops = ops
        N = ops.N
        exc = ops.excitations
        self.index = [np.flatnonzero(exc == K) for K in range(N + 1)]
        self.dims = np.array([len(i) for i in self.index])
        self.offsets = np.concatenate([[0], np.cumsum(self.dims**2)])
        self.size = int(self.offsets[-1])
        heff = ops.heff.tocsc()
        rows, cols, vals = [], [], []

        def put(block, r0, c0):
            coo = sp.coo_matrix(block)
            rows.append(coo.row + r0)
            cols.append(coo.col + c0)
            vals.append(coo.data)

        for K in range(N + 1):
            idx = self.index[K]
            d = len(idx)
            X = (-1j * heff[idx][:, idx]).tocsr()
            eye = sp.identity(d, format="csr")
            put(sp.kron(eye, X) + sp.kron(X.conj(), eye), self.offsets[K], self.offsets[K])
            if K < N:
                up = self.index[K + 1]
                for c in ops.jumps:
                    C = c.tocsr()[idx][:, up]
                    if C.nnz:
                        put(sp.kron(C.conj(), C), self.offsets[K], self.offsets[K + 1])
        self.L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(self.size, self.size))
        self.L.sum_duplicates()
        self.weights = {}

    def vectorize(self, rho) -> np.ndarray:
        v = np.empty(self.size, dtype=complex)
        for K, idx in enumerate(self.index):
            v[self.offsets[K]:self.offsets[K + 1]] = rho[np.ix_(idx, idx)].ravel(order="F")
        return v

    def block(self, v, K):
        d = self.dims[K]
        return v[self.offsets[K]:self.offsets[K + 1]].reshape(d, d, order="F")

    def to_dense(self, v) -> np.ndarray:
        rho = np.zeros((self.ops.dim, self.ops.dim), dtype=complex)
        for K, idx in enumerate(self.index):
            rho[np.ix_(idx, idx)] = self.block(v, K)
        return rho

    def _w(self, name, op):
        if name not in self.weights:
            op = sp.csr_matrix(op)
            parts = [op[idx][:, idx].toarray().ravel() for idx in self.index]
            self.weights[name] = np.concatenate(parts)
        return self.weights[name]

    def expect(self, op, v, name=None) -> complex:
        """``Tr(op rho)`` for an excitation-conserving ``op``."""
        w = self._w(name or id(op), op)
        return complex(np.dot(w, v))

    def moments(self, v):
        ops = self.ops
        pops = np.array([np.trace(self.block(v, K)).real for K in range(ops.N + 1)])
        m = np.arange(ops.N + 1) - ops.N / 2.0
        sz = float(m @ pops)
        sz2 = float(m**2 @ pops)
        return (self.expect(ops.rate, v, "rate").real, sz, self.expect(ops.S2, v, "S2").real,
                max(sz2 - sz * sz, 0.0), self.expect(ops.transverse, v, "T").real, pops)

    def propagate(self, v0, times, chunk_budget=4_000_000):
        """Yield ``(t, v(t))`` on a uniform grid starting at ``times[0] = 0``.

        Purely dissipative generators acting on real data run in real arithmetic.
        """
        times = np.asarray(times, dtype=float)
        L = self.L
        if not np.any(L.data.imag) and not np.any(np.imag(v0)):
            L, v0 = L.real.tocsr(), np.real(v0)
        if len(times) * self.size <= chunk_budget:
            out = expm_multiply(L, v0, start=times[0], stop=times[-1], num=len(times), endpoint=True)
            for t, v in zip(times, out):
                yield t, v
            return
        v = v0
        yield times[0], v
        for t0, t1 in zip(times[:-1], times[1:]):
            v = expm_multiply(L * (t1 - t0), v)
            yield t1, v


def _off_sector(rho, exc, tol):
    mask = exc[:, None] != exc[None, :]
    return float(np.abs(rho[mask]).max()) > tol if mask.any() else False


def _as_density(state0, N):
    x = np.asarray(state0, dtype=complex)
    if x.shape == (2**N,):
        x = x / np.linalg.norm(x)
        return np.outer(x, x.conj())
    if x.shape != (2**N, 2**N):
        raise PreconditionError(f"state has shape {x.shape}, expected a 2^{N} vector or matrix")
    return x


def fully_inverted(N) -> np.ndarray:
    psi = np.zeros(2**N, dtype=complex)
    psi[-1] = 1.0
    return psi


def evolve_full(model: OracleModel, state0, config: IntegratorConfig, observers: Sequence[Callable] = (),
                allow_large=False, method=None):
    """Exact evolution of a density matrix in the full space.

    ``method`` ``"sector"`` (default when ``state0`` has no coherences between
    excitation numbers) exponentiates the sparse Liouvillian restricted to
    the manifold-diagonal blocks; ``"dense"`` integrates the full density
    matrix with an embedded Runge-Kutta scheme, applying the generator
    without materialising it.

    Returns ``(ObservableSeries, final density matrix)``.
    """
    N = model.N
    _guard(N, DENSITY_GUARD, allow_large, "density-matrix oracle", hint="; use evolve_trajectories")
    ops = model.operators()
    rho0 = _as_density(state0, N)
    if abs(np.trace(rho0).real - 1.0) > config.tol_trace:
        raise PreconditionError("initial state is not normalised")
    times = config.sample_times()
    if method is None:
        method = "dense" if _off_sector(rho0, ops.excitations, 1e-14) else "sector"
    rows = []
    if method == "sector":
        if _off_sector(rho0, ops.excitations, 1e-14):
            raise UnsupportedSectorError("sector propagation needs a state without inter-manifold coherences")
        gen = SectorGenerator(ops)
        v = gen.vectorize(rho0)
        for t, v in gen.propagate(v, times):
            rows.append(gen.moments(v))
            if observers:
                rho = gen.to_dense(v)
                for f in observers:
                    f(t, rho)
        final = gen.to_dense(v)
    elif method == "dense":
        dim = ops.dim
        fun = lambda t, y: ops.lindblad_rhs(y.reshape(dim, dim, order="F")).ravel(order="F")
        solver = DOP853(fun, 0.0, rho0.ravel(order="F"), times[-1], rtol=config.rtol, atol=config.atol)
        rows.append(ops.moments(rho0))
        for f in observers:
            f(times[0], rho0)
        i = 1
        final = rho0
        while i < len(times):
            solver.step()
            if solver.status == "failed":
                raise NumericalStateError(f"dense oracle integration failed at t={solver.t:.6g}")
            dense = solver.dense_output()
            while i < len(times) and times[i] <= solver.t + 1e-14:
                rho = dense(times[i]).reshape(dim, dim, order="F")
                rho = 0.5 * (rho + rho.conj().T)
                rows.append(ops.moments(rho))
                for f in observers:
                    f(times[i], rho)
                final = rho
                i += 1
    else:
        raise PreconditionError(f"unknown oracle method {method!r}")
    series = ObservableSeries.from_rows(N, times, rows, {"method": f"oracle-{method}"})
    return series, final


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def _traj_record(ops, psi):
    p = np.abs(psi) ** 2
    sz = float(ops.sz_diag @ p)
    return np.concatenate([[np.vdot(psi, ops.rate @ psi).real, sz, float(ops.sz_diag**2 @ p),
                            np.vdot(psi, ops.S2 @ psi).real, np.vdot(psi, ops.transverse @ psi).real],
                           np.bincount(ops.excitations, weights=p, minlength=ops.N + 1)])


def _one_trajectory(ops, psi0, times, rng, rtol, atol):
    out = np.empty((len(times), 5 + ops.N + 1))
    heff = ops.heff
    fun = lambda t, y: -1j * (heff @ y)
    psi = psi0 / np.linalg.norm(psi0)
    t = float(times[0])
    out[0] = _traj_record(ops, psi)
    i = 1
    r = rng.random()
    n_jumps = 0
    while i < len(times):
        solver = DOP853(fun, t, psi, times[-1], rtol=rtol, atol=atol)
        while True:
            if solver.status != "running":
                i = len(times)
                break
            solver.step()
            if solver.status == "failed":
                raise NumericalStateError(f"trajectory integration failed at t={solver.t:.6g}")
            dense = solver.dense_output()
            tc = None
            if np.vdot(solver.y, solver.y).real <= r:
                tc = brentq(lambda s: np.vdot(dense(s), dense(s)).real - r, solver.t_old, solver.t,
                            xtol=1e-13)
            upto = tc if tc is not None else solver.t
            while i < len(times) and times[i] <= upto + 1e-14:
                phi = dense(times[i])
                out[i] = _traj_record(ops, phi / np.linalg.norm(phi))
                i += 1
            if tc is not None:
                phi = dense(tc)
                weights = np.array([np.linalg.norm(c @ phi) ** 2 for c in ops.jumps])
                k = rng.choice(len(weights), p=weights / weights.sum())
                psi = ops.jumps[k] @ phi
                psi /= np.linalg.norm(psi)
                t = tc
                r = rng.random()
                n_jumps += 1
                break
            if i >= len(times):
                break
    return out, n_jumps


def _trajectory_chunk(args):
    model, psi0, times, seed, indices, rtol, atol = args
    ops = model.operators()
    res = []
    for k in indices:
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        res.append(_one_trajectory(ops, psi0, times, rng, rtol, atol))
    return res


def _chunks(n, workers):
    size = math.ceil(n / workers)
    return [list(range(s, min(n, s + size))) for s in range(0, n, size)]


def evolve_trajectories(model: OracleModel, psi0, config: IntegratorConfig, n_traj: int, seed: int,
                        workers: int = 1, allow_large=False):
    """Quantum-jump unravelling with waiting-time sampling.

    Trajectory ``k`` draws from ``SeedSequence([seed, k])``, so results do not
    depend on ``workers``. Returns an :class:`ObservableSeries` of ensemble
    means; standard errors are in ``series.meta["stderr"]``.
    """
    N = model.N
    _guard(N, TRAJECTORY_GUARD, allow_large, "trajectory oracle")
    if n_traj < 1:
        raise PreconditionError("need at least one trajectory")
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (2**N,):
        raise PreconditionError(f"initial vector has shape {psi0.shape}, expected ({2**N},)")
    model.channels()
    times = config.sample_times()
    jobs = [(model, psi0, times, seed, idx, config.rtol, config.atol) for idx in _chunks(n_traj, max(1, workers))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_trajectory_chunk, jobs))
    else:
        parts = [_trajectory_chunk(j) for j in jobs]
    records = np.stack([r for part in parts for r, _ in part])
    jumps = [n for part in parts for _, n in part]
    mean = records.mean(axis=0)
    se = records.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else np.full_like(mean, np.nan)
    R, Sz, Sz2, S2, T = mean[:, :5].T
    rows = [(R[k], Sz[k], S2[k], max(Sz2[k] - Sz[k] ** 2, 0.0), T[k], mean[k, 5:]) for k in range(len(times))]
    stderr = {"R": se[:, 0], "Sz": se[:, 1], "S2": se[:, 3]}
    return ObservableSeries.from_rows(N, times, rows, {"method": "trajectories", "n_traj": n_traj,
                                                       "seed": seed, "mean_jumps": float(np.mean(jumps)),
                                                       "stderr": stderr})


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def embedding_isometry(partition: SuperspinPartition) -> sp.csr_matrix:
    """``W`` with ``W |k_1..k_p> =`` product of signed symmetric states over each superspin's sites."""
    N = partition.N
    _guard(N, TRAJECTORY_GUARD, False, "embedding")
    x = np.arange(2**N)
    bits = (x[:, None] >> (N - np.arange(1, N + 1))[None, :]) & 1
    labels = partition.site_labels()
    signs = partition.site_signs()
    p = len(partition.sizes)
    k = np.stack([bits[:, labels == a].sum(axis=1) for a in range(p)], axis=1)
    col = np.zeros(x.size, dtype=np.int64)
    for a in range(p):
        col = col * partition.radices[a] + k[:, a]
    sign = np.prod(np.where(bits == 1, signs[None, :], 1.0), axis=1)
    norm = np.prod([[comb(partition.sizes[a], int(v)) for a, v in enumerate(row)] for row in k], axis=1)
    return sp.csr_matrix((sign / np.sqrt(norm), (x, col)), shape=(2**N, partition.dim))


def embed(state, partition: SuperspinPartition):
    """Map a superspin vector, density matrix or :class:`SuperspinState` into the full space."""
    W = embedding_isometry(partition)
    if isinstance(state, SuperspinState):
        if state.partition != partition:
            raise PreconditionError("state belongs to a different partition")
        state = state.to_dense()
    x = np.asarray(state, dtype=complex)
    if x.shape == (partition.dim,):
        return W @ x
    if x.shape == (partition.dim, partition.dim):
        return np.asarray(W @ (W @ x.conj().T).conj().T)
    raise UnsupportedSectorError(
        f"state of shape {x.shape} is not in the maximal-Casimir sector of dimension {partition.dim}"
    )


def restrict(rho, partition: SuperspinPartition, tol=1e-8) -> np.ndarray:
    """Inverse of :func:`embed` for density matrices supported on the embedded sector."""
    W = embedding_isometry(partition)
    rho = np.asarray(rho, dtype=complex)
    small = np.asarray(W.conj().T @ (W.conj().T @ rho.conj().T).conj().T)
    leak = abs(np.trace(rho).real - np.trace(small).real)
    if leak > tol:
        raise UnsupportedSectorError(f"state has weight {leak:.3g} outside the superspin sector")
    return small


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def _psd_sqrt(rho, tol):
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if w.min() < -tol:
        raise NumericalStateError(f"matrix has negative eigenvalue {w.min():.3g}")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity(rho1, rho2, tol=1e-8) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(rho1) rho2 sqrt(rho1)))^2``; vectors are taken as pure states."""
    a = np.asarray(rho1, dtype=complex)
    b = np.asarray(rho2, dtype=complex)
    if a.ndim == 1 and b.ndim == 1:
        return float(abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real))
    if a.ndim == 1:
        a = np.outer(a, a.conj()) / np.vdot(a, a).real
    if b.ndim == 1:
        b = np.outer(b, b.conj()) / np.vdot(b, b).real
    if a.shape != b.shape:
        raise PreconditionError(f"shapes {a.shape} and {b.shape} differ")
    s = _psd_sqrt(a, tol)
    w = np.linalg.eigvalsh(s @ b @ s)
    if w.min() < -tol:
        raise NumericalStateError(f"matrix has negative eigenvalue {w.min():.3g}")
    return float(min(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2, 1.0))


def sector_fidelity(gen: SectorGenerator, v1, v2, tol=1e-8) -> float:
    """Fidelity of two manifold-diagonal states, block by block."""
    acc = 0.0
    for K in range(len(gen.dims)):
        a, b = gen.block(v1, K), gen.block(v2, K)
        s = _psd_sqrt(a, tol)
        w = np.linalg.eigvalsh(s @ b @ s)
        acc += np.sum(np.sqrt(np.clip(w, 0.0, None)))
    return float(min(acc**2, 1.0))


def _stack_blocks(gen: SectorGenerator, states, K):
    return np.stack([gen.block(v, K) for v in states])


def _batched_sqrt(blocks, tol):
    w, v = np.linalg.eigh(0.5 * (blocks + np.conj(np.swapaxes(blocks, -1, -2))))
    if w.min() < -tol:
        raise NumericalStateError(f"matrix has negative eigenvalue {w.min():.3g}")
    return (v * np.sqrt(np.clip(w, 0.0, None))[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def reference_roots(gen: SectorGenerator, states, tol=1e-8):
    """Per-block square roots of a sequence of reference states, for :func:`fidelity_series`."""
    return [_batched_sqrt(_stack_blocks(gen, states, K), tol) for K in range(len(gen.dims))]


def fidelity_series(gen: SectorGenerator, roots, states, tol=1e-8) -> np.ndarray:
    """Sector fidelities of ``states[i]`` against the references whose roots are ``roots``."""
    acc = np.zeros(len(states))
    for K, s in enumerate(roots):
        b = _stack_blocks(gen, states, K)
        w = np.linalg.eigvalsh(s @ b @ s)
        if w.min() < -tol:
            raise NumericalStateError(f"matrix has negative eigenvalue {w.min():.3g}")
        acc += np.sqrt(np.clip(w, 0.0, None)).sum(axis=1)
    return np.minimum(acc**2, 1.0)


def trace_distance(rho1, rho2) -> float:
    d = np.asarray(rho1) - np.asarray(rho2)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T))).sum())


# ---------------------------------------------------------------------------
# positional disorder
# ---------------------------------------------------------------------------

@dataclass
class DisorderRow:
    sigma: float
    min_fidelity: float
    min_fidelity_se: float
    peak_ratio: float
    peak_ratio_se: float
    inv_squeezing: float
    inv_squeezing_se: float
    n_realizations: int


@dataclass
class DisorderReport:
    N: int
    spacing: str
    seed: int
    t_max: float
    rows: list = field(default_factory=list)
    reference_peak: float = 0.0
    reference_inv_squeezing: float = 0.0

    def as_dict(self):
        return {"N": self.N, "spacing": self.spacing, "seed": self.seed, "t_max": self.t_max,
                "reference_peak_rate": self.reference_peak,
                "reference_inverse_squeezing": self.reference_inv_squeezing,
                "rows": [r.__dict__ for r in self.rows]}


class RateFamily:
    """Sector generators of purely dissipative models, linear in the rate matrix.

    Every pair ``i <= j`` contributes a fixed sparse term on a shared sparsity
    pattern, so a new rate matrix only reweights the stored data. Block
    access mirrors :class:`SectorGenerator`.
    """

    def __init__(self, template: SectorGenerator, gamma_local=0.0):
        self.template = template
        N = template.ops.N
        self.N = N
        self.dims, self.offsets, self.size = template.dims, template.offsets, template.size
        self.pairs = [(i, j) for i in range(N) for j in range(i, N)]
        sm = [sigma_minus(j, N).tocsc() for j in range(1, N + 1)]
        index = template.index
        keys, terms, vals = [], [], []
        w_rows, w_terms, w_vals = [], [], []

        def put(block, r0, c0, t):
            coo = sp.coo_matrix(block)
            keys.append((coo.row + r0).astype(np.int64) * self.size + coo.col + c0)
            terms.append(np.full(coo.nnz, t))
            vals.append(coo.data)

        for t, pair in enumerate(self.pairs + [None]):
            if pair is None:
                damp = sum((sm[k].T @ sm[k] for k in range(N)), sp.csc_matrix((2**N, 2**N)))
                jump_pairs = [(k, k) for k in range(N)]
                weight = gamma_local
            else:
                i, j = pair
                damp = sm[i].T @ sm[j]
                if i != j:
                    damp = damp + sm[j].T @ sm[i]
                jump_pairs = [(i, j), (j, i)] if i != j else [(i, i)]
                weight = 1.0
            for K in range(N + 1):
                idx = index[K]
                X = -0.5 * weight * damp.tocsr()[idx][:, idx]
                eye = sp.identity(len(idx), format="csr")
                put(sp.kron(eye, X) + sp.kron(X, eye), self.offsets[K], self.offsets[K], t)
                if K < N:
                    up = index[K + 1]
                    for a, c in jump_pairs:
                        put(weight * sp.kron(sm[a][idx][:, up], sm[c][idx][:, up]),
                            self.offsets[K], self.offsets[K + 1], t)
            if pair is not None:
                w = np.concatenate([damp.tocsr()[idx][:, idx].toarray().ravel() for idx in index])
                nz = np.flatnonzero(w)
                w_rows.append(nz)
                w_terms.append(np.full(nz.size, t))
                w_vals.append(w[nz])
        keys = np.concatenate(keys)
        uniq, pos = np.unique(keys, return_inverse=True)
        n_terms = len(self.pairs) + 1
        self._coef = sp.csr_matrix((np.concatenate(vals), (pos, np.concatenate(terms))),
                                   shape=(uniq.size, n_terms))
        rows = uniq // self.size
        self._indices = (uniq % self.size).astype(np.int64)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=self.size))])
        self._rate_w = sp.csr_matrix((np.concatenate(w_vals), (np.concatenate(w_rows), np.concatenate(w_terms))),
                                     shape=(self.size, n_terms))
        self._transverse = template._w("T", template.ops.transverse).real

    def _pair_vector(self, gamma):
        g = np.asarray(gamma, dtype=float)
        if g.shape != (self.N, self.N) or not np.allclose(g, g.T, atol=1e-13):
            raise PreconditionError("gamma must be a symmetric N x N matrix")
        return np.append([g[i, j] for i, j in self.pairs], 1.0)

    def generator(self, gamma) -> sp.csr_matrix:
        data = self._coef @ self._pair_vector(gamma)
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.size, self.size))

    def rate_weights(self, gamma) -> np.ndarray:
        c = self._pair_vector(gamma)
        c[-1] = 0.0
        return self._rate_w @ c

    def block(self, v, K):
        return self.template.block(v, K)

    def run(self, gamma, times, m_max):
        """States on ``times``, their emission rates, and the final average inverse squeezing."""
        OracleModel(gamma).channels()
        L = self.generator(gamma)
        v0 = np.zeros(self.size)
        v0[-1] = 1.0
        states = expm_multiply(L, v0, start=times[0], stop=times[-1], num=len(times), endpoint=True)
        w = self.rate_weights(gamma)
        rates = states @ w
        rates[int(np.argmax(rates))] = refine_peak(L, w, states, times, rates)
        sl = slice(self.offsets[1], self.offsets[m_max + 1])
        inv_xi = 4.0 * float(self._transverse[sl] @ states[-1][sl]) / self.N
        return states, rates, inv_xi


def refine_peak(L, w, states, times, rates, iterations=4):
    """Continuous-time maximum of ``R(t) = w . v(t)`` near the sampled maximum.

    Newton iterations on ``dR/dt = (L^T w) . v`` starting from the best sample;
    falls back to the sampled value when the maximum sits on the grid boundary.
    """
    i = int(np.argmax(rates))
    wl = L.T @ w
    wll = L.T @ wl
    v, t = states[i], times[i]
    best = rates[i]
    for _ in range(iterations):
        d1, d2 = float(wl @ v), float(wll @ v)
        if d2 >= 0:
            break
        step = -d1 / d2
        t_new = t + step
        if not times[0] <= t_new <= times[-1] or abs(step) > times[-1] - times[0]:
            break
        v = expm_multiply(L * step, v)
        t = t_new
        best = max(best, float(w @ v))
        if abs(step) < 1e-12 * max(1.0, abs(t)):
            break
    return best


def _disorder_chunk(args):
    family, spacing, gamma_1d, sigma, seed, si, indices, times, m_max, ref_roots, ref_peak = args
    N = family.N
    out = []
    for r in indices:
        rng = np.random.default_rng(np.random.SeedSequence([seed, si, r]))
        eps = rng.normal(0.0, sigma, size=N)
        gamma = build_gamma_waveguide(N, spacing, gamma_1d, disorder=eps).gamma
        states, rates, inv_xi = family.run(gamma, times, m_max)
        fmin = float(fidelity_series(family, ref_roots, states).min())
        out.append((fmin, rates.max() / ref_peak, inv_xi))
    return out


def disorder_scan(N: int, spacing: Spacing, sigmas, n_realizations: int, seed: int,
                  config: IntegratorConfig, gamma_1d=1.0, gamma_local=0.0, m_max=None,
                  workers: int = 1, allow_large=False) -> DisorderReport:
    """Robustness of the dissipative dynamics against Gaussian position errors.

    Positions ``x_j = j + eps_j`` with ``eps_j`` drawn with standard deviation
    ``sigma``. For every sigma, averages over realizations the minimum over the
    sampling grid of the fidelity with the ordered evolution, the ratio of
    peak emission rates, and the average inverse squeezing of the final state.
    Realization ``r`` at sigma index ``i`` draws from ``SeedSequence([seed, i, r])``.
    """
    _guard(N, DENSITY_GUARD, allow_large, "disorder scan")
    if n_realizations < 1:
        raise PreconditionError("need at least one realization")
    m_max = N // 3 if m_max is None else m_max
    times = config.sample_times()
    gamma0 = build_gamma_waveguide(N, spacing, gamma_1d).gamma
    template = SectorGenerator(OracleModel(gamma0, signs=build_partition(N, spacing).site_signs()).operators())
    family = RateFamily(template, gamma_local)
    ref_states, ref_rates, ref_xi = family.run(gamma0, times, m_max)
    ref_peak = float(ref_rates.max())
    ref_roots = reference_roots(family, ref_states)
    report = DisorderReport(N=N, spacing=str(spacing), seed=seed, t_max=float(times[-1]),
                            reference_peak=ref_peak, reference_inv_squeezing=float(ref_xi))
    for si, sigma in enumerate(sigmas):
        if sigma < 0:
            raise PreconditionError("sigma must be non-negative")
        jobs = [(family, spacing, gamma_1d, float(sigma), seed, si, idx, times, m_max,
                 ref_roots, ref_peak) for idx in _chunks(n_realizations, max(1, workers))]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_disorder_chunk, jobs))
        else:
            parts = [_disorder_chunk(j) for j in jobs]
        vals = np.array([x for part in parts for x in part])
        se = vals.std(axis=0, ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else np.zeros(3)
        mean = vals.mean(axis=0)
        report.rows.append(DisorderRow(sigma=float(sigma), min_fidelity=float(mean[0]),
                                       min_fidelity_se=float(se[0]), peak_ratio=float(mean[1]),
                                       peak_ratio_se=float(se[1]), inv_squeezing=float(mean[2]),
                                       inv_squeezing_se=float(se[2]), n_realizations=len(vals)))
    return report
