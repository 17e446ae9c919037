"""Dark states of the superspin dissipator and their relation to Dicke states."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb, sqrt
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from .core.coupling import build_gamma_waveguide
from .core.operators import CollectiveOps, build_collective_ops
from .core.partition import Spacing, SuperspinPartition
from .core.state import layout_for
from .errors import PreconditionError

NULL_RTOL = 1e-10


def _require_two_thirds(partition: SuperspinPartition):
    if partition.spacing.p != 3 or partition.spacing.n % 2:
        raise PreconditionError(
            f"symmetric jump operators need p = 3 with even n (kd = 2pi/3 family), got {partition.spacing}"
        )
    if partition.N % 3:
        raise PreconditionError(f"symmetric jump operators need N divisible by 3, got N={partition.N}")


def symmetric_jump_ops(partition: SuperspinPartition, ops: CollectiveOps = None):
    """Eigen-channels ``(O_+, O_-)`` of the kd = 2pi/3 coupling, each with rate ``3 gamma / 2``.

    ``O_+ = (-J_1 + 2 J_2 - J_3) / sqrt(6)`` and ``O_- = (J_1 - J_3) / sqrt(2)``.
    """
    _require_two_thirds(partition)
    ops = ops or build_collective_ops(partition)
    j1, j2, j3 = ops.J_minus
    o_plus = ((-j1 + 2.0 * j2 - j3) / sqrt(6.0)).tocsr()
    o_minus = ((j1 - j3) / sqrt(2.0)).tocsr()
    return o_plus, o_minus


SYMMETRIC_RATE = 1.5


class SymmetricBasis:
    """Superspin-exchange-symmetric states of one excitation manifold (p = 3).

    Each column of :attr:`vectors` is the equal-weight superposition of all
    distinct permutations of an occupation multiset ``n1 >= n2 >= n3``.
    """

    def __init__(self, partition: SuperspinPartition, m: int):
        _require_two_thirds(partition)
        if not 0 <= m <= partition.N:
            raise PreconditionError(f"excitation number {m} outside 0..{partition.N}")
        self.partition = partition
        self.m = int(m)
        cap = partition.N // 3
        self.multisets = [(a, b, m - a - b)
                          for a in range(min(cap, m), -1, -1)
                          for b in range(min(a, m - a), -1, -1)
                          if 0 <= m - a - b <= b]
        rows, cols, vals = [], [], []
        for c, ms in enumerate(self.multisets):
            perms = sorted(set(itertools.permutations(ms)))
            amp = 1.0 / sqrt(len(perms))
            for occ in perms:
                rows.append(partition.index(occ))
                cols.append(c)
                vals.append(amp)
        self.vectors = sp.csc_matrix((vals, (rows, cols)), shape=(partition.dim, len(self.multisets)))

    def __len__(self):
        return len(self.multisets)


@dataclass
class DarkStateReport:
    m: int
    vector: np.ndarray
    residual: float
    rate: float
    fidelity: float
    xi_D: float

    def as_dict(self, partition: SuperspinPartition = None, tol=1e-14):
        out = {"m": self.m, "residual": self.residual, "emission_rate": self.rate,
               "fidelity_vs_dicke": self.fidelity, "xi_D": self.xi_D}
        if partition is not None:
            occ = partition.occupations()
            nz = np.flatnonzero(np.abs(self.vector) > tol)
            out["amplitudes"] = [{"occupation": occ[i].tolist(), "re": float(self.vector[i].real),
                                  "im": float(self.vector[i].imag)} for i in nz]
        return out


def _fix_phase(vec, occupations, tol=1e-12):
    """Make the amplitude on the lexicographically largest occupied tuple real and positive."""
    nz = np.flatnonzero(np.abs(vec) > tol)
    if nz.size == 0:
        return vec
    keys = [tuple(occupations[i]) for i in nz]
    lead = nz[max(range(len(keys)), key=keys.__getitem__)]
    return vec * (abs(vec[lead]) / vec[lead])


def _null_columns(mat, rtol=NULL_RTOL):
    """Orthonormal basis (columns) of the right nullspace of a dense matrix."""
    k = mat.shape[1]
    if mat.shape[0] == 0 or not np.any(mat):
        return np.eye(k, dtype=complex)
    _, s, vh = np.linalg.svd(mat, full_matrices=True)
    rank = int(np.sum(s > rtol * s[0]))
    return vh[rank:].conj().T


def _report(vec, partition, m, ops, kernel, jumps):
    vec = _fix_phase(vec, partition.occupations())
    residual = max(float(np.linalg.norm(o @ vec)) for o in jumps)
    rate = float(np.vdot(vec, kernel @ vec).real)
    transverse = float(np.vdot(vec, ops.transverse @ vec).real)
    xi = partition.N * 0.25 / transverse if transverse > 1e-12 else float("nan")
    fid = fidelity_vs_dicke(vec, partition, m)
    return DarkStateReport(m=m, vector=vec, residual=residual, rate=rate, fidelity=fid, xi_D=xi)


def find_dark_states(partition: SuperspinPartition, m: int, ops: CollectiveOps = None,
                     rtol=NULL_RTOL) -> List[DarkStateReport]:
    """Joint nullspace of ``O_+`` and ``O_-`` inside the symmetric subspace of manifold ``m``."""
    ops = ops or build_collective_ops(partition)
    o_plus, o_minus = symmetric_jump_ops(partition, ops)
    basis = SymmetricBasis(partition, m)
    if len(basis) == 0:
        return []
    lay = layout_for(partition)
    if m == 0:
        stacked = np.zeros((0, len(basis)))
    else:
        rows = lay.block_indices(m - 1)
        stacked = np.vstack([(o @ basis.vectors)[rows].toarray() for o in (o_plus, o_minus)])
    null = _null_columns(stacked, rtol)
    gamma = build_gamma_waveguide(partition.N, partition.spacing).gamma_reduced
    kernel = ops.dissipator_kernel(gamma)
    out = []
    for c in null.T:
        vec = np.asarray(basis.vectors @ c).ravel().astype(complex)
        vec /= np.linalg.norm(vec)
        out.append(_report(vec, partition, m, ops, kernel, (o_plus, o_minus)))
    return out


def find_dark_states_general(partition: SuperspinPartition, m: int, gamma_reduced=None,
                             ops: CollectiveOps = None, rtol=NULL_RTOL) -> List[DarkStateReport]:
    """Dark states of manifold ``m`` over the full product basis, for any spacing.

    Uses the kernel ``sum_ab G_ab J_a+ J_b-``, which is positive semidefinite
    and vanishes exactly on states annihilated by every jump operator.
    """
    ops = ops or build_collective_ops(partition)
    if gamma_reduced is None:
        gamma_reduced = build_gamma_waveguide(partition.N, partition.spacing).gamma_reduced
    kernel = ops.dissipator_kernel(gamma_reduced)
    lay = layout_for(partition)
    if not 0 <= m < lay.n_blocks:
        raise PreconditionError(f"excitation number {m} outside 0..{partition.N}")
    idx = lay.block_indices(m)
    block = kernel[idx][:, idx].toarray()
    w, v = np.linalg.eigh(block)
    scale = max(abs(w[-1]), 1.0)
    null = v[:, w < rtol * scale]
    ev, evec = np.linalg.eigh(np.asarray(gamma_reduced, dtype=float))
    jumps = [sum(evec[a, mu] * ops.J_minus[a] for a in range(len(ops.J_minus)))
             for mu in range(len(ev)) if ev[mu] > 1e-12]
    out = []
    for c in null.T:
        vec = np.zeros(partition.dim, dtype=complex)
        vec[idx] = c
        out.append(_report(vec, partition, m, ops, kernel, jumps))
    return out


def dicke_state(partition: SuperspinPartition, m: int) -> np.ndarray:
    """Maximal-spin ``m``-excitation state: amplitude ``sqrt(prod_a C(n_a, k_a) / C(N, m))``."""
    if not 0 <= m <= partition.N:
        raise PreconditionError(f"excitation number {m} outside 0..{partition.N}")
    occ = partition.occupations()
    keep = occ.sum(axis=1) == m
    vec = np.zeros(partition.dim, dtype=complex)
    total = comb(partition.N, m)
    for i in np.flatnonzero(keep):
        vec[i] = sqrt(np.prod([comb(n, k) for n, k in zip(partition.sizes, occ[i])]) / total)
    return vec


def fidelity_vs_dicke(vector, partition: SuperspinPartition, m: int, tol=1e-10) -> float:
    """``|<psi|D_m>|^2`` for a normalised ``psi`` inside manifold ``m``."""
    vec = np.asarray(vector, dtype=complex)
    vec = vec / np.linalg.norm(vec)
    exc = layout_for(partition).excitations
    outside = float(np.linalg.norm(vec[exc != m]))
    if outside > tol:
        raise PreconditionError(f"vector has weight {outside:.3g} outside manifold m={m}")
    return float(abs(np.vdot(vec, dicke_state(partition, m))) ** 2)


def two_excitation_fidelity(N: int) -> float:
    """Closed form ``1 / (1 + 1 / (9 j (2 j - 1)))`` with ``j = N / 6``."""
    j = N / 6.0
    return 1.0 / (1.0 + 1.0 / (9.0 * j * (2.0 * j - 1.0)))


def dark_support_residual(state, reports) -> float:
    """Population of ``state`` outside the ground state and the given dark states."""
    lay = state.layout
    captured = float(state.populations()[0])
    for r in reports:
        if r.m == 0:
            continue
        v = r.vector[lay.block_indices(r.m)]
        captured += float(np.vdot(v, state.block(r.m) @ v).real)
    return 1.0 - captured


@dataclass(frozen=True)
class DickeDecayCheck:
    N: int
    m: int
    rate_left: float
    rate_right: float
    bound: float

    @property
    def satisfied(self) -> bool:
        slack = 1e-12 * max(self.bound, 1.0)
        return self.rate_left <= self.bound + slack and self.rate_right <= self.bound + slack


def directional_rate(N: int, m: int, kd: float, sign: int = +1) -> float:
    """``<D_m| O^dag O |D_m>`` for ``O = sum_j e^{sign i kd j} sigma_-^j / sqrt(N)``.

    Evaluated by enumerating the ``(m-1)``-excitation targets: each collects
    the phases of the qubits that can decay into it.
    """
    if not 0 <= m <= N:
        raise PreconditionError(f"excitation number {m} outside 0..{N}")
    if m == 0:
        return 0.0
    phases = np.exp(sign * 1j * kd * np.arange(1, N + 1))
    total = phases.sum()
    acc = 0.0
    for sub in itertools.combinations(range(N), m - 1):
        alpha = total - phases[list(sub)].sum()
        acc += abs(alpha) ** 2
    return acc / (N * comb(N, m))


def dicke_decay_bound_check(N: int, m: int, spacing: Spacing) -> DickeDecayCheck:
    """Directional decay rates of the symmetric Dicke state against ``(m-1)^2 m / (N (N-m+1))``."""
    if (spacing.n * N) % spacing.p or ((spacing.n * N) // spacing.p) % 2:
        raise PreconditionError(
            f"phase-sum condition violated: n N / p = {spacing.n}*{N}/{spacing.p} is not an even integer"
        )
    if not 1 <= m <= N:
        raise PreconditionError(f"excitation number {m} outside 1..{N}")
    bound = (m - 1) ** 2 * m / (N * (N - m + 1))
    return DickeDecayCheck(N=N, m=m, rate_left=directional_rate(N, m, spacing.kd, +1),
                           rate_right=directional_rate(N, m, spacing.kd, -1), bound=bound)
