"""Compiled right-hand side of the superspin master equation on block storage."""

import numba as nb
import numpy as np


@nb.njit(cache=True, fastmath=True)
def dissipator_rhs(flat, out, starts, dims, offsets, a_ptr, a_idx, a_val, src, coef, gmat):
    """out = L[rho] for block-stored rho.

    ``a_*`` is the CSR form of ``sum_ab G_ab J_a+ J_b-`` in block order,
    ``src``/``coef`` describe ``J_a-`` from block ``K + 1`` into block ``K``.
    Only the upper triangle is computed; the result is exactly Hermitian.
    Real ``flat`` stays real: every coefficient of the dissipator is real.
    """
    nblk = dims.size
    p = gmat.shape[0]
    for K in range(nblk):
        d = dims[K]
        if d == 0:
            continue
        s0 = starts[K]
        rho = flat[offsets[K]:offsets[K] + d * d].reshape((d, d))
        res = out[offsets[K]:offsets[K] + d * d].reshape((d, d))

        # X = -1/2 A rho
        for x in range(d):
            for y in range(d):
                res[x, y] = 0.0
            for q in range(a_ptr[s0 + x], a_ptr[s0 + x + 1]):
                z = a_idx[q] - s0
                w = -0.5 * a_val[q]
                for y in range(d):
                    res[x, y] += w * rho[z, y]
        for x in range(d):
            for y in range(x, d):
                v = res[x, y] + np.conj(res[y, x])
                res[x, y] = v

        if K + 1 < nblk and dims[K + 1] > 0:
            du = dims[K + 1]
            up = flat[offsets[K + 1]:offsets[K + 1] + du * du].reshape((du, du))
            w = np.empty((p, du), dtype=flat.dtype)
            for x in range(d):
                for a in range(p):
                    for yy in range(du):
                        w[a, yy] = 0.0
                for b in range(p):
                    sb = src[b, s0 + x]
                    if sb < 0:
                        continue
                    cb = coef[b, s0 + x]
                    for a in range(p):
                        g = gmat[a, b] * cb
                        if g == 0.0:
                            continue
                        for yy in range(du):
                            w[a, yy] += g * up[sb, yy]
                for y in range(x, d):
                    acc = res[x, y] * 0.0
                    for a in range(p):
                        sa = src[a, s0 + y]
                        if sa >= 0:
                            acc += coef[a, s0 + y] * w[a, sa]
                    res[x, y] += acc

        for x in range(d):
            res[x, x] = res[x, x].real
            for y in range(x + 1, d):
                res[y, x] = np.conj(res[x, y])
    return out


@nb.njit(cache=True)
def hermitize_blocks(flat, dims, offsets, tile=64):
    """In-place ``rho <- (rho + rho^dagger) / 2`` on every block, tile by tile."""
    for K in range(dims.size):
        d = dims[K]
        blk = flat[offsets[K]:offsets[K] + d * d].reshape((d, d))
        for x0 in range(0, d, tile):
            x1 = min(x0 + tile, d)
            for y0 in range(x0, d, tile):
                y1 = min(y0 + tile, d)
                for x in range(x0, x1):
                    if y0 == x0:
                        blk[x, x] = blk[x, x].real
                        ys = x + 1
                    else:
                        ys = y0
                    for y in range(ys, y1):
                        v = 0.5 * (blk[x, y] + np.conj(blk[y, x]))
                        blk[x, y] = v
                        blk[y, x] = np.conj(v)
    return flat


@nb.njit(cache=True)
def axpy_into(out, y, a, k):
    """``out = y + a * k`` without temporaries."""
    for i in range(out.size):
        out[i] = y[i] + a * k[i]


@nb.njit(cache=True)
def axpy_inplace(acc, a, k):
    """``acc += a * k`` without temporaries."""
    for i in range(acc.size):
        acc[i] += a * k[i]
