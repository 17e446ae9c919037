"""Density matrices in the superspin product basis."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import NumericalStateError, PreconditionError, UnsupportedSectorError
from .layout import BlockLayout
from .partition import SuperspinPartition


@lru_cache(maxsize=32)
def layout_for(partition: SuperspinPartition) -> BlockLayout:
    return BlockLayout(partition)


class SuperspinState:
    """Density matrix of the maximal-Casimir sector, stored by excitation manifold.

    Parameters
    ----------
    partition : SuperspinPartition
    data : ndarray
        Flat block storage as described in :mod:`superspin.core.layout`.
        Real input is kept as float64 (a real symmetric density matrix),
        anything else is stored as complex128.
    """

    def __init__(self, partition: SuperspinPartition, data):
        self.partition = partition
        self.layout = layout_for(partition)
        data = np.asarray(data)
        data = data.astype(float if np.isrealobj(data) else complex, copy=False)
        if data.shape != (self.layout.size,):
            raise PreconditionError(
                f"block data of length {data.shape} does not match partition ({self.layout.size})"
            )
        self.data = data

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_dense(cls, partition, rho, tol=1e-12):
        rho = np.asarray(rho, dtype=complex)
        dim = partition.dim
        if rho.shape != (dim, dim):
            raise PreconditionError(f"rho has shape {rho.shape}, expected {(dim, dim)}")
        layout = layout_for(partition)
        off = layout.off_block_weight(rho)
        if off > tol:
            raise UnsupportedSectorError(
                f"rho has coherences of size {off:.3g} between excitation manifolds; "
                "only manifold-diagonal states are stored"
            )
        return cls(partition, layout.from_dense(rho))

    @classmethod
    def from_vector(cls, partition, psi, tol=1e-12):
        psi = np.asarray(psi, dtype=complex)
        if psi.shape != (partition.dim,):
            raise PreconditionError(f"vector has shape {psi.shape}, expected ({partition.dim},)")
        norm = np.linalg.norm(psi)
        if norm == 0:
            raise PreconditionError("zero vector")
        psi = psi / norm
        layout = layout_for(partition)
        support = np.unique(layout.excitations[np.abs(psi) > tol])
        if support.size != 1:
            raise UnsupportedSectorError(
                f"vector spans excitation manifolds {support.tolist()}; "
                "only single-manifold pure states are stored"
            )
        K = int(support[0])
        v = psi[layout.block_indices(K)]
        data = np.zeros(layout.size, dtype=complex)
        data[layout.block_slice(K)] = np.outer(v, v.conj()).ravel()
        return cls(partition, data)

    @classmethod
    def basis_state(cls, partition, occupations):
        """Pure product state ``|k_1, ..., k_p>``."""
        psi = np.zeros(partition.dim, dtype=complex)
        psi[partition.index(occupations)] = 1.0
        return cls.from_vector(partition, psi)

    @classmethod
    def fully_inverted(cls, partition):
        return cls.basis_state(partition, partition.sizes)

    @classmethod
    def ground(cls, partition):
        return cls.basis_state(partition, (0,) * len(partition.sizes))

    # -- access -----------------------------------------------------------
    def copy(self):
        return SuperspinState(self.partition, self.data.copy())

    def as_real(self):
        """Copy with float64 storage when every entry is real, otherwise a plain copy."""
        if np.isrealobj(self.data) or not np.any(self.data.imag):
            return SuperspinState(self.partition, self.data.real.copy())
        return self.copy()

    def block(self, K) -> np.ndarray:
        return self.layout.block_view(self.data, K)

    def to_dense(self) -> np.ndarray:
        return self.layout.to_dense(self.data)

    def trace(self) -> float:
        return float(self.data[self.layout.diagonal_positions].real.sum())

    def populations(self) -> np.ndarray:
        """``Tr(P_m rho)`` for ``m = 0..N`` excitations."""
        diag = self.data[self.layout.diagonal_positions].real
        return np.add.reduceat(diag, self.layout.starts[:-1]) if diag.size else diag

    def expect(self, weights) -> complex:
        pos, w = weights
        return complex(np.dot(w, self.data[pos]))

    def min_eigenvalue(self) -> float:
        lo = np.inf
        for K in range(self.layout.n_blocks):
            if self.layout.dims[K]:
                lo = min(lo, np.linalg.eigvalsh(self.block(K))[0])
        return float(lo)

    def hermiticity_error(self) -> float:
        err = 0.0
        for K in range(self.layout.n_blocks):
            b = self.block(K)
            if b.size:
                err = max(err, float(np.abs(b - b.conj().T).max()))
        return err

    def validate(self, tol_trace=1e-8, tol_pos=1e-8, tol_herm=1e-10):
        tr = self.trace()
        if abs(tr - 1.0) > tol_trace:
            raise NumericalStateError(f"trace {tr:.12g} deviates from 1 by more than {tol_trace}")
        herm = self.hermiticity_error()
        if herm > tol_herm:
            raise NumericalStateError(f"state not Hermitian (error {herm:.3g})")
        lo = self.min_eigenvalue()
        if lo < -tol_pos:
            raise NumericalStateError(f"state has negative eigenvalue {lo:.3g}")
        return self

    def __repr__(self):
        return f"SuperspinState(N={self.partition.N}, sizes={self.partition.sizes})"
