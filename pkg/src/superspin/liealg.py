"""Sitewise Lie-algebra closure of collective jump operators.

Every operator met here is a site sum ``sum_j c_j x^j`` with ``x`` one of
``sigma_-``, ``sigma_+`` or ``sigma_z``, so an operator is a class tag plus a
coefficient vector and every commutator is an elementwise product:

    [A^dag, B] = sum_j conj(a_j) b_j sigma_z^j
    [Z, B]     = -2 sum_j d_j b_j sigma_-^j
    [Z, A^dag] = +2 sum_j d_j conj(a_j) sigma_+^j
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .core.partition import SuperspinPartition
from .errors import PreconditionError, SuperspinError

LOWERING, RAISING, ZED = "lowering", "raising", "zed"
RANK_RTOL = 1e-10


class AlgebraConsistencyError(SuperspinError):
    """The zed algebra failed a structural check that holds for sitewise operators."""


@dataclass(frozen=True, eq=False)
class SiteOperator:
    """``sum_j coeffs[j] x^j`` with ``x`` = sigma_-, sigma_+ or sigma_z for kind lowering, raising, zed."""

    kind: str
    coeffs: np.ndarray

    def __post_init__(self):
        if self.kind not in (LOWERING, RAISING, ZED):
            raise PreconditionError(f"unknown operator class {self.kind!r}")
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or not np.any(c):
            raise PreconditionError("coefficient vector must be one-dimensional and not all zero")
        object.__setattr__(self, "coeffs", c)

    @property
    def N(self):
        return self.coeffs.size

    def dagger(self) -> "SiteOperator":
        kind = {LOWERING: RAISING, RAISING: LOWERING, ZED: ZED}[self.kind]
        return SiteOperator(kind, self.coeffs.conj())

    def lowering_mirror(self) -> np.ndarray:
        """Coefficient vector of the lowering element this operator contributes to the span."""
        return self.coeffs if self.kind == LOWERING else self.coeffs.conj()

    def to_dense(self) -> np.ndarray:
        """``2^N x 2^N`` matrix (qubit 1 most significant, |g> = 0); small N only."""
        if self.N > 12:
            raise PreconditionError("dense site operators limited to N <= 12")
        single = {LOWERING: np.array([[0, 1], [0, 0]]), RAISING: np.array([[0, 0], [1, 0]]),
                  ZED: np.diag([-1.0, 1.0])}[self.kind].astype(complex)
        out = np.zeros((2**self.N, 2**self.N), dtype=complex)
        for j, c in enumerate(self.coeffs):
            if c != 0:
                op = np.kron(np.kron(np.eye(2**j), single), np.eye(2 ** (self.N - j - 1)))
                out += c * op
        return out


def _op(kind, coeffs, atol=1e-15):
    if np.max(np.abs(coeffs), initial=0.0) <= atol:
        return None
    return SiteOperator(kind, coeffs)


def bracket(x: SiteOperator, y: SiteOperator) -> Optional[SiteOperator]:
    """Commutator ``[x, y]``; ``None`` when it vanishes."""
    kinds = (x.kind, y.kind)
    a, b = x.coeffs, y.coeffs
    if kinds == (RAISING, LOWERING):
        out = _op(ZED, a * b)
    elif kinds == (LOWERING, RAISING):
        out = _op(ZED, -a * b)
    elif kinds == (ZED, LOWERING):
        out = _op(LOWERING, -2.0 * a * b)
    elif kinds == (LOWERING, ZED):
        out = _op(LOWERING, 2.0 * a * b)
    elif kinds == (ZED, RAISING):
        out = _op(RAISING, 2.0 * a * b)
    elif kinds == (RAISING, ZED):
        out = _op(RAISING, -2.0 * a * b)
    else:
        out = None
    return out


def directional_ops(N: int, kd: float):
    """``(O_L, O_R)`` with coefficients ``exp(+/- i kd j) / sqrt(N)``, ``j = 1..N``."""
    if N < 1:
        raise PreconditionError(f"need N >= 1, got {N}")
    j = np.arange(1, N + 1)
    return (SiteOperator(LOWERING, np.exp(1j * kd * j) / math.sqrt(N)),
            SiteOperator(LOWERING, np.exp(-1j * kd * j) / math.sqrt(N)))


def jump_generators(gamma, tol=1e-12) -> List[SiteOperator]:
    """Lowering operators ``sum_i v_i sigma_-^i`` from the eigenvectors of a rate matrix."""
    w, v = np.linalg.eigh(np.asarray(gamma, dtype=float))
    scale = max(abs(w).max(), 1.0)
    return [SiteOperator(LOWERING, v[:, k]) for k in range(len(w)) if w[k] > tol * scale]


class _Span:
    """Orthonormal basis grown by modified Gram-Schmidt with one re-orthogonalisation.

    A residual counts as new when it exceeds ``rtol`` times the larger of the
    candidate norm and ``1 / sqrt(N)``, the norm of the elementwise product of
    two flat unit vectors. The floor keeps products of rounding noise out.
    """

    def __init__(self, N, rtol):
        self.rows = np.zeros((0, N), dtype=complex)
        self.rtol = rtol
        self.floor = 1.0 / math.sqrt(N)

    def add(self, v) -> bool:
        v = np.asarray(v, dtype=complex)
        norm = np.linalg.norm(v)
        if norm <= self.rtol * self.floor:
            return False
        w = v.copy()
        for _ in range(2):
            for q in self.rows:
                w -= np.vdot(q, w) * q
        if np.linalg.norm(w) <= self.rtol * max(norm, self.floor):
            return False
        self.rows = np.vstack([self.rows, w / np.linalg.norm(w)])
        return True

    def __len__(self):
        return self.rows.shape[0]


@dataclass
class ClosureResult:
    closed: bool
    dimension: int
    lowering_basis: np.ndarray
    zed_basis: np.ndarray
    iterations: int
    max_dim: int

    @property
    def N(self):
        return self.lowering_basis.shape[1]

    def as_dict(self):
        return {"closed": self.closed, "dimension": self.dimension, "iterations": self.iterations,
                "max_dim": self.max_dim, "dim_lowering": int(self.lowering_basis.shape[0]),
                "dim_zed": int(self.zed_basis.shape[0])}


def default_max_dim(N: int) -> int:
    return 3 * math.ceil(N / 2) + 3


def close_algebra(generators: Sequence[SiteOperator], max_dim: int = None,
                  rtol: float = RANK_RTOL) -> ClosureResult:
    """Close the Lie algebra generated by ``generators`` and their adjoints.

    The algebra is ``L + L^dag + Z`` with ``L`` the lowering coefficient span
    and ``Z`` the zed span; its dimension is ``2 dim L + dim Z``. Growth stops
    as soon as that exceeds ``max_dim`` and the result is reported open.
    """
    generators = list(generators)
    if not generators:
        raise PreconditionError("need at least one generator")
    N = generators[0].N
    if any(g.N != N for g in generators):
        raise PreconditionError("generators act on different numbers of sites")
    max_dim = default_max_dim(N) if max_dim is None else int(max_dim)
    if max_dim < 3:
        raise PreconditionError(f"max_dim must be at least 3, got {max_dim}")

    L, Z = _Span(N, rtol), _Span(N, rtol)
    new_l, new_z = [], []
    for g in generators:
        if g.kind == ZED:
            if Z.add(g.coeffs):
                new_z.append(Z.rows[-1])
        elif L.add(g.lowering_mirror()):
            new_l.append(L.rows[-1])

    def dim():
        return 2 * len(L) + len(Z)

    iterations = 0
    while (new_l or new_z) and dim() <= max_dim:
        iterations += 1
        cand_z = [a.conj() * b for a in new_l for b in L.rows]
        cand_z += [b.conj() * a for a in new_l for b in L.rows]
        cand_l = [d * b for d in new_z for b in L.rows] + [d * b for d in Z.rows for b in new_l]
        cand_l += [d.conj() * b for d in new_z for b in L.rows] + [d.conj() * b for d in Z.rows for b in new_l]
        new_l, new_z = [], []
        for v in cand_z:
            if Z.add(v):
                new_z.append(Z.rows[-1])
            if dim() > max_dim:
                break
        for v in cand_l:
            if dim() > max_dim:
                break
            if L.add(v):
                new_l.append(L.rows[-1])

    d = dim()
    return ClosureResult(closed=d <= max_dim, dimension=d, lowering_basis=L.rows,
                         zed_basis=Z.rows, iterations=iterations, max_dim=max_dim)


def subspace_projector(rows) -> np.ndarray:
    """Orthogonal projector onto the span of the given orthonormal rows."""
    rows = np.asarray(rows)
    return rows.T @ rows.conj()


# ---------------------------------------------------------------------------
# canonical basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CanonicalPartition:
    """Site sets (1-based, each sorted) with the phase of every site relative to the first."""

    site_sets: tuple
    signs: tuple
    idempotents: np.ndarray

    @property
    def p(self):
        return len(self.site_sets)

    def matches(self, partition: SuperspinPartition, atol=1e-8) -> bool:
        """Equality with ``partition`` up to relabelling of the superspins."""
        mine = {s: g for s, g in zip(self.site_sets, self.signs)}
        if len(mine) != len(partition.site_map):
            return False
        for sites, sg in zip(partition.site_map, partition.signs):
            if tuple(sites) not in mine:
                return False
            if not np.allclose(mine[tuple(sites)], sg, atol=atol):
                return False
        return True

    def as_dict(self):
        return {"site_sets": [list(s) for s in self.site_sets],
                "signs": [[_real_if_close(x) for x in g] for g in self.signs]}


def _real_if_close(x, tol=1e-10):
    x = complex(x)
    return x.real if abs(x.imag) < tol else [x.real, x.imag]


def canonical_decomposition(closure: ClosureResult, tol: float = 1e-8, seed: int = 0) -> CanonicalPartition:
    """Recover the superspins from a closed algebra.

    The zed span is a commutative algebra under elementwise multiplication;
    its primitive idempotents are indicator vectors whose supports are the
    superspins. A generic element takes distinct values on distinct supports,
    so grouping equal entries yields them. Phases come from a generic
    lowering element restricted to each support.
    """
    if not closure.closed:
        raise PreconditionError("canonical decomposition needs a closed algebra")
    Zb, Lb = closure.zed_basis, closure.lowering_basis
    N = closure.N
    rng = np.random.default_rng(seed)
    z = (rng.normal(size=len(Zb)) + 1j * rng.normal(size=len(Zb))) @ Zb
    scale = max(np.abs(z).max(), 1.0)

    groups: List[List[int]] = []
    reps: List[complex] = []
    for j in range(N):
        for g, r in zip(groups, reps):
            if abs(z[j] - r) <= tol * scale:
                g.append(j)
                break
        else:
            groups.append([j])
            reps.append(z[j])

    proj = subspace_projector(Zb)
    idem = np.zeros((len(groups), N))
    for k, g in enumerate(groups):
        idem[k, g] = 1.0
        resid = np.linalg.norm(proj @ idem[k] - idem[k])
        if resid > 1e-6 * math.sqrt(len(g)):
            raise AlgebraConsistencyError(
                f"indicator of sites {[s + 1 for s in g]} is not in the zed algebra (residual {resid:.3g})"
            )
    if len(groups) != len(Zb):
        raise AlgebraConsistencyError(
            f"found {len(groups)} idempotents for a zed algebra of dimension {len(Zb)}"
        )

    ell = (rng.normal(size=len(Lb)) + 1j * rng.normal(size=len(Lb))) @ Lb
    sets, signs = [], []
    for g in groups:
        sub = ell[g]
        if abs(sub[0]) <= tol * max(np.abs(ell).max(), 1.0):
            raise AlgebraConsistencyError(f"lowering span vanishes on site {g[0] + 1}")
        ratio = sub / sub[0]
        if np.any(np.abs(np.abs(ratio) - 1.0) > 1e-6):
            raise AlgebraConsistencyError("lowering elements are not unimodular on a superspin")
        snapped = np.round(ratio.real)
        if np.allclose(ratio, snapped, atol=1e-8):
            phases = tuple(float(x) for x in snapped)
        else:
            phases = tuple(complex(x) for x in ratio)
        sets.append(tuple(s + 1 for s in g))
        signs.append(phases)
    return CanonicalPartition(site_sets=tuple(sets), signs=tuple(signs), idempotents=idem)


def adjoint_matrices(basis: Sequence[SiteOperator]) -> np.ndarray:
    """``ad`` matrices with ``M[i][j, k]`` = coefficient of ``basis[k]`` in ``[basis[i], basis[j]]``."""
    n = len(basis)
    N = basis[0].N
    kinds = (LOWERING, RAISING, ZED)

    def embed(op):
        v = np.zeros(3 * N, dtype=complex)
        if op is not None:
            k = kinds.index(op.kind)
            v[k * N:(k + 1) * N] = op.coeffs
        return v

    B = np.column_stack([embed(b) for b in basis])
    out = np.zeros((n, n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            target = embed(bracket(basis[i], basis[j]))
            if not np.any(target):
                continue
            coef, *_ = np.linalg.lstsq(B, target, rcond=None)
            if np.linalg.norm(B @ coef - target) > 1e-9 * np.linalg.norm(target):
                raise AlgebraConsistencyError(f"[e{i + 1}, e{j + 1}] leaves the span of the basis")
            out[i, j] = coef
    return out


def directional_basis(N: int, kd: float, z_orders: Sequence[int] = (0, 2)) -> List[SiteOperator]:
    """``(O_R^dag, O_R, O_L^dag, O_L, O_{z,s}...)`` with ``O_{z,s} = sum_j exp(i s kd j) sigma_z^j / N``."""
    o_l, o_r = directional_ops(N, kd)
    j = np.arange(1, N + 1)
    zs = [SiteOperator(ZED, np.exp(1j * s * kd * j) / N) for s in z_orders]
    return [o_r.dagger(), o_r, o_l.dagger(), o_l] + zs


def detect_partition(N: int, kd: float, max_dim: int = None) -> Optional[CanonicalPartition]:
    """Closure from the directional operators followed by canonical decomposition; ``None`` if open."""
    res = close_algebra(directional_ops(N, kd), max_dim=max_dim)
    return canonical_decomposition(res) if res.closed else None
