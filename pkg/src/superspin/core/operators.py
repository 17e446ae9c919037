"""Collective superspin operators in the mixed-radix product basis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .partition import SuperspinPartition


def ladder_lowering(n: int) -> sp.csr_matrix:
    """``J_-`` of a spin ``n/2`` in the occupation basis ``|k>``, ``k = m + n/2``.

    ``J_- |k> = sqrt(k (n - k + 1)) |k - 1>``.
    """
    k = np.arange(1, n + 1, dtype=float)
    return sp.diags(np.sqrt(k * (n - k + 1)), 1, shape=(n + 1, n + 1), format="csr")


def _embed(local, a, radices):
    """Kron ``local`` into slot ``a`` of the product basis (slot 0 is the slowest digit)."""
    left = int(np.prod(radices[:a]))
    right = int(np.prod(radices[a + 1:]))
    out = local
    if left > 1:
        out = sp.kron(sp.identity(left, format="csr"), out, format="csr")
    if right > 1:
        out = sp.kron(out, sp.identity(right, format="csr"), format="csr")
    return out.tocsr()


@dataclass(frozen=True, eq=False)
class CollectiveOps:
    """Sparse collective operators of a partition.

    Attributes hold lists indexed by superspin (``J_minus[a]``) and the
    total-spin combinations built from them. ``S_x`` and ``S_y`` use the
    phase-bearing ``J_a``, so they differ from ``sum_j sigma_x^j / 2`` when the
    sign pattern is non-trivial.
    """

    partition: SuperspinPartition
    J_minus: tuple
    J_plus: tuple
    J_z: tuple
    S_minus: sp.csr_matrix
    S_plus: sp.csr_matrix
    S_z: sp.csr_matrix
    S_x: sp.csr_matrix
    S_y: sp.csr_matrix

    @property
    def S2(self) -> sp.csr_matrix:
        return (self.S_x @ self.S_x + self.S_y @ self.S_y + self.S_z @ self.S_z).tocsr()

    @property
    def transverse(self) -> sp.csr_matrix:
        """``S_x^2 + S_y^2 = (S_+ S_- + S_- S_+) / 2``."""
        return (0.5 * (self.S_plus @ self.S_minus + self.S_minus @ self.S_plus)).tocsr()

    def casimir(self, a) -> sp.csr_matrix:
        """Single-superspin Casimir ``J_a^2``."""
        jp, jm, jz = self.J_plus[a], self.J_minus[a], self.J_z[a]
        return (0.5 * (jp @ jm + jm @ jp) + jz @ jz).tocsr()

    def dissipator_kernel(self, gamma_reduced) -> sp.csr_matrix:
        """``sum_ab G_ab J_a+ J_b-``; its expectation value is the emission rate."""
        p = len(self.J_minus)
        dim = self.partition.dim
        out = sp.csr_matrix((dim, dim))
        for a in range(p):
            for b in range(p):
                g = gamma_reduced[a, b]
                if g != 0.0:
                    out = out + g * (self.J_plus[a] @ self.J_minus[b])
        out = out.tocsr()
        out.eliminate_zeros()
        return out


def build_collective_ops(partition: SuperspinPartition) -> CollectiveOps:
    radices = partition.radices
    jm, jp, jz = [], [], []
    for a, n_a in enumerate(partition.sizes):
        low = _embed(ladder_lowering(n_a), a, radices)
        zed = _embed(sp.diags(np.arange(n_a + 1) - n_a / 2.0, format="csr"), a, radices)
        jm.append(low)
        jp.append(low.T.tocsr())
        jz.append(zed)
    s_minus = sum(jm[1:], jm[0]).tocsr()
    s_plus = s_minus.T.tocsr()
    s_z = sum(jz[1:], jz[0]).tocsr()
    s_x = (0.5 * (s_plus + s_minus)).tocsr()
    s_y = (-0.5j * (s_plus - s_minus)).tocsr()
    return CollectiveOps(partition=partition, J_minus=tuple(jm), J_plus=tuple(jp),
                         J_z=tuple(jz), S_minus=s_minus, S_plus=s_plus, S_z=s_z,
                         S_x=s_x, S_y=s_y)
