"""Excitation-number block layout of superspin density matrices.

Every generator in this package conserves or lowers the total excitation
number, so a density matrix that starts without coherences between
excitation manifolds stays block diagonal. Blocks are stored back to back
in one flat complex array; block ``K`` holds the ``d_K x d_K`` matrix of
the manifold with ``K`` excitations in C order.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .partition import SuperspinPartition


class BlockLayout:
    def __init__(self, partition: SuperspinPartition):
        self.partition = partition
        occ = partition.occupations()
        self.excitations = occ.sum(axis=1)
        self.order = np.argsort(self.excitations, kind="stable")
        self.rank = np.empty_like(self.order)
        self.rank[self.order] = np.arange(self.order.size)

        N = partition.N
        counts = np.bincount(self.excitations, minlength=N + 1)
        self.dims = counts.astype(np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.dims)]).astype(np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.dims**2)]).astype(np.int64)
        self.size = int(self.offsets[-1])
        self.local = (self.rank - self.starts[self.excitations]).astype(np.int64)

        # raising map: for each state (block order) and superspin a, the local
        # index of state + e_a inside block K + 1, with the J_a- matrix element
        p = len(partition.sizes)
        occ_bo = occ[self.order]
        strides = np.array([int(np.prod(partition.radices[a + 1:])) for a in range(p)])
        self.src = np.full((p, occ.shape[0]), -1, dtype=np.int64)
        self.coef = np.zeros((p, occ.shape[0]))
        for a, n_a in enumerate(partition.sizes):
            k = occ_bo[:, a]
            ok = k < n_a
            up = self.order[ok] + strides[a]
            self.src[a, ok] = self.local[up]
            self.coef[a, ok] = np.sqrt((k[ok] + 1.0) * (n_a - k[ok]))

    @property
    def n_blocks(self) -> int:
        return self.dims.size

    def block_slice(self, K) -> slice:
        return slice(int(self.offsets[K]), int(self.offsets[K + 1]))

    def block_view(self, flat, K) -> np.ndarray:
        d = int(self.dims[K])
        return flat[self.block_slice(K)].reshape(d, d)

    def block_indices(self, K) -> np.ndarray:
        """Product-basis indices of manifold ``K`` in block order."""
        return self.order[self.starts[K]:self.starts[K + 1]]

    def permute(self, op) -> sp.csr_matrix:
        """Express a product-basis operator in block order."""
        op = sp.csr_matrix(op)
        return op[self.order][:, self.order].tocsr()

    def check_block_diagonal(self, op, tol=0.0) -> bool:
        coo = sp.coo_matrix(self.permute(op))
        K = self.excitations[self.order]
        off = K[coo.row] != K[coo.col]
        return not np.any(np.abs(coo.data[off]) > tol)

    def trace_weights(self, op):
        """Flat positions and weights with ``tr(op rho) = sum(w * flat[pos])``.

        ``op`` must conserve the excitation number.
        """
        coo = sp.coo_matrix(self.permute(op))
        K = self.excitations[self.order][coo.row]
        if np.any(K != self.excitations[self.order][coo.col]):
            raise ValueError("operator couples different excitation manifolds")
        i = coo.row - self.starts[K]
        j = coo.col - self.starts[K]
        pos = self.offsets[K] + j * self.dims[K] + i
        return pos.astype(np.int64), coo.data

    @cached_property
    def diagonal_positions(self) -> np.ndarray:
        """Flat positions of all diagonal elements, in block order."""
        K = self.excitations[self.order]
        loc = np.arange(self.order.size) - self.starts[K]
        return (self.offsets[K] + loc * self.dims[K] + loc).astype(np.int64)

    def to_dense(self, flat) -> np.ndarray:
        dim = self.partition.dim
        out = np.zeros((dim, dim), dtype=complex)
        for K in range(self.n_blocks):
            idx = self.block_indices(K)
            out[np.ix_(idx, idx)] = self.block_view(flat, K)
        return out

    def from_dense(self, rho) -> np.ndarray:
        flat = np.empty(self.size, dtype=complex)
        for K in range(self.n_blocks):
            idx = self.block_indices(K)
            flat[self.block_slice(K)] = rho[np.ix_(idx, idx)].ravel()
        return flat

    def off_block_weight(self, rho) -> float:
        """Largest magnitude of ``rho`` between different excitation manifolds."""
        K = self.excitations
        mask = K[:, None] != K[None, :]
        return float(np.abs(rho[mask]).max()) if mask.any() else 0.0
