"""Superspin dissipator built from the reduced coupling matrix."""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from ..errors import PreconditionError
from ._kernels import dissipator_rhs
from .coupling import CouplingModel
from .operators import CollectiveOps, build_collective_ops
from .partition import SuperspinPartition
from .state import SuperspinState, layout_for


class SuperspinLindbladian:
    """``L[rho] = sum_ab G_ab / 2 (2 J_b- rho J_a+ - {J_a+ J_b-, rho})``.

    Works on block-stored states through :meth:`rhs` and on arbitrary dense
    matrices (including coherences between manifolds) through
    :meth:`apply_dense`.
    """

    def __init__(self, partition: SuperspinPartition, gamma_reduced, ops: CollectiveOps = None):
        gamma_reduced = np.asarray(gamma_reduced, dtype=float)
        p = len(partition.sizes)
        if gamma_reduced.shape != (p, p):
            raise PreconditionError(f"reduced coupling has shape {gamma_reduced.shape}, expected {(p, p)}")
        self.partition = partition
        self.gamma_reduced = gamma_reduced
        self.ops = ops if ops is not None else build_collective_ops(partition)
        self.layout = layout_for(partition)
        self.kernel = self.ops.dissipator_kernel(gamma_reduced)
        a_bo = self.layout.permute(self.kernel)
        a_bo.sort_indices()
        self._a_ptr = a_bo.indptr.astype(np.int64)
        self._a_idx = a_bo.indices.astype(np.int64)
        self._a_val = a_bo.data.real.astype(float)
        self._g = np.ascontiguousarray(gamma_reduced)

    @property
    def dim(self) -> int:
        return self.partition.dim

    # -- block storage -------------------------------------------------------
    def rhs(self, flat, out=None):
        if out is None:
            out = np.empty_like(flat)
        lay = self.layout
        return dissipator_rhs(flat, out, lay.starts, lay.dims, lay.offsets, self._a_ptr,
                              self._a_idx, self._a_val, lay.src, lay.coef, self._g)

    def apply(self, state: SuperspinState) -> SuperspinState:
        if state.partition != self.partition:
            raise PreconditionError("state and generator belong to different partitions")
        return SuperspinState(self.partition, self.rhs(state.data))

    # -- dense -----------------------------------------------------------------
    def apply_dense(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        if rho.shape != (self.dim, self.dim):
            raise PreconditionError(f"rho has shape {rho.shape}, generator acts on dimension {self.dim}")
        ops = self.ops
        p = len(ops.J_minus)
        out = -0.5 * (self.kernel @ rho + (self.kernel.T @ rho.T).T)
        for a in range(p):
            for b in range(p):
                g = self.gamma_reduced[a, b]
                if g != 0.0:
                    out += g * (ops.J_minus[b] @ (ops.J_plus[a].T @ rho.T).T)
        return out

    def dense_superoperator(self) -> np.ndarray:
        """Column-stacked matrix of the generator; small dimensions only."""
        dim = self.dim
        if dim > 200:
            raise PreconditionError("dense superoperator limited to dim <= 200")
        eye = np.eye(dim)
        cols = []
        for j in range(dim * dim):
            e = np.zeros(dim * dim, dtype=complex)
            e[j] = 1.0
            cols.append(self.apply_dense(e.reshape(dim, dim, order="F")).ravel(order="F"))
        return np.array(cols).T

    # -- diagnostics -------------------------------------------------------------
    @cached_property
    def max_rate(self) -> float:
        """Largest eigenvalue of ``sum_ab G_ab J_a+ J_b-``, the stiffest decay rate."""
        A = self.kernel.real
        if A.shape[0] <= 400:
            return float(np.linalg.eigvalsh(A.toarray())[-1]) if A.shape[0] else 0.0
        lam = sla.eigsh(sp.csr_matrix(A, dtype=float), k=1, which="LA",
                        return_eigenvectors=False, tol=1e-6)
        return float(lam[0])

    def emission_weights(self):
        return self.layout.trace_weights(self.kernel)


def build_lindbladian(partition: SuperspinPartition, coupling: CouplingModel,
                      ops: CollectiveOps = None) -> SuperspinLindbladian:
    """Superspin generator of ``coupling``; raises if the model carries disorder."""
    if coupling.N != partition.N or coupling.spacing != partition.spacing:
        raise PreconditionError("coupling model and partition describe different arrays")
    return SuperspinLindbladian(partition, coupling.gamma_reduced, ops=ops)
