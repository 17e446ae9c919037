import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from superspin.core import (SuperspinState, build_collective_ops, build_gamma_waveguide, build_hcoh_waveguide,
                            build_lindbladian, build_partition, ladder_lowering, layout_for, ring_gamma_matrix,
                            ring_greens, ring_validity)
from superspin.core.partition import Spacing
from superspin.errors import PreconditionError, SymmetryBrokenError, UnsupportedSectorError

from conftest import random_density, random_hermitian

spacings = st.builds(Spacing, st.integers(1, 7), st.integers(1, 6))


def _dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


# -- spacing and partition ---------------------------------------------------

def test_spacing_reduces_to_lowest_terms():
    s = Spacing(4, 6)
    assert (s.n, s.p) == (2, 3)
    assert s.kd == pytest.approx(2 * math.pi / 3)
    assert Spacing.parse("2/3") == s
    assert Spacing.parse(" 1 ") == Spacing(1, 1)


@pytest.mark.parametrize("text", ["0/3", "x", "1/0", "-1/2"])
def test_spacing_rejects_bad_input(text):
    with pytest.raises(PreconditionError):
        Spacing.parse(text)


def test_partition_sizes_from_uneven_split():
    assert build_partition(7, Spacing(2, 3)).sizes == (3, 2, 2)


def test_partition_dicke_limit():
    part = build_partition(5, Spacing(2, 1))
    assert part.sizes == (5,)
    assert np.all(part.site_signs() == 1)


def test_partition_signs_alternate_for_odd_n():
    part = build_partition(6, Spacing(1, 2))
    assert part.sizes == (3, 3)
    assert part.site_map[0] == (1, 3, 5)
    assert part.signs[0] == (1, -1, 1)


@given(N=st.integers(1, 40), spacing=spacings)
def test_partition_invariants(N, spacing):
    part = build_partition(N, spacing)
    assert sum(part.sizes) == N
    base, extra = divmod(N, spacing.p)
    assert part.sizes == tuple(base + 1 if a < extra else base for a in range(spacing.p))
    sites = sorted(s for group in part.site_map for s in group)
    assert sites == list(range(1, N + 1))
    for a, group in enumerate(part.site_map):
        for l, site in enumerate(group):
            assert site == a + 1 + l * spacing.p
            assert part.signs[a][l] == (-1) ** (l * spacing.n)


def test_mixed_radix_first_superspin_slowest():
    part = build_partition(5, Spacing(1, 2))
    occ = part.occupations()
    assert part.radices == (4, 3)
    assert tuple(occ[1]) == (0, 1)
    assert tuple(occ[3]) == (1, 0)
    assert all(part.index(tuple(o)) == i for i, o in enumerate(occ))


# -- couplings -----------------------------------------------------------------

def test_reduced_gamma_two_thirds():
    g = build_gamma_waveguide(9, Spacing(2, 3), gamma_1d=2.0).gamma_reduced
    expected = 2.0 * np.array([[1, -0.5, -0.5], [-0.5, 1, -0.5], [-0.5, -0.5, 1]])
    np.testing.assert_allclose(g, expected, atol=1e-14)


def test_gamma_kd_pi_rank_one():
    g = build_gamma_waveguide(8, Spacing(1, 1)).gamma
    i = np.arange(8)
    np.testing.assert_allclose(g, (-1.0) ** np.abs(i[:, None] - i[None, :]), atol=1e-14)
    assert np.linalg.matrix_rank(g, tol=1e-10) == 1


def test_gamma_rank_two_at_two_thirds():
    g = build_gamma_waveguide(6, Spacing(2, 3)).gamma
    assert np.linalg.matrix_rank(g, tol=1e-10) == 2


@given(N=st.integers(2, 30), spacing=spacings)
def test_gamma_rank_positivity_periodicity(N, spacing):
    model = build_gamma_waveguide(N, spacing)
    g = model.gamma
    np.testing.assert_allclose(g, g.T)
    np.testing.assert_allclose(np.diag(g), 1.0)
    sv = np.linalg.svd(g, compute_uv=False)
    if N >= 3:
        assert sv[2] < 1e-10 * N
    assert np.linalg.eigvalsh(model.gamma_reduced).min() >= -1e-12
    if N >= spacing.p:
        np.testing.assert_allclose(model.gamma_reduced, g[:spacing.p, :spacing.p], atol=1e-14)
    p = spacing.p
    for j in range(N - p):
        np.testing.assert_allclose(g[:, j + p], (-1) ** spacing.n * g[:, j], atol=1e-12)


def test_gamma_periodicity_elementwise():
    for n, p in [(1, 2), (2, 3), (3, 4), (1, 5), (2, 5)]:
        s = Spacing(n, p)
        g = build_gamma_waveguide(3 * p + 1, s).gamma
        for i in range(g.shape[0]):
            for j in range(g.shape[0] - p):
                assert g[i, j + p] == pytest.approx((-1) ** s.n * g[i, j], abs=1e-12)


def test_disorder_blocks_reduced_matrix():
    model = build_gamma_waveguide(6, Spacing(2, 3), disorder=[0.01, 0, 0, 0, 0, 0])
    assert model.disordered
    with pytest.raises(SymmetryBrokenError):
        _ = model.gamma_reduced
    assert build_gamma_waveguide(6, Spacing(2, 3), disorder=np.zeros(6)).gamma_reduced.shape == (3, 3)
    with pytest.raises(PreconditionError):
        build_gamma_waveguide(6, Spacing(2, 3), disorder=[0.1, 0.2])


def test_hamiltonian_matrix_examples():
    assert np.all(np.abs(build_hcoh_waveguide(5, Spacing(1, 1))) < 1e-15)
    j = build_hcoh_waveguide(3, Spacing(1, 2))
    assert j[0, 1] == pytest.approx(0.5) and j[1, 2] == pytest.approx(0.5)
    assert j[0, 2] == pytest.approx(0.0, abs=1e-15)
    assert build_hcoh_waveguide(2, Spacing(2, 3))[0, 1] == pytest.approx(math.sqrt(3) / 4)
    np.testing.assert_allclose(np.diag(build_hcoh_waveguide(4, Spacing(2, 3))), 0)


def test_ring_greens_examples():
    kw = dict(L=1.0, omega_r=10.0, kappa_c=0.1)
    g0 = ring_greens(0.3, 0.3, 10.0, **kw)
    assert abs(g0.real) < 1e-15 and g0.imag != 0
    node = 0.3 + math.pi / 2 / 10.0
    assert abs(ring_greens(node, 0.3, 10.5, **kw)) < 1e-14
    r2 = 1.0 - 0.1 * 1.0 / 2
    omega = 10.0 + 0.05 / r2
    g_half = ring_greens(0.3, 0.3, omega, **kw) * omega / 10.0
    assert abs(g_half) == pytest.approx(abs(g0) / math.sqrt(2), rel=1e-12)


def test_ring_gamma_reproduces_cosine():
    z = np.arange(1, 7) * (2 * math.pi / 3) / 10.0
    g = ring_gamma_matrix(z, L=1.0, omega_r=10.0, kappa_c=0.1)
    np.testing.assert_allclose(g, build_gamma_waveguide(6, Spacing(2, 3)).gamma, atol=1e-12)
    small = ring_validity(10.0, L=1.0, omega_r=10.0, kappa_c=0.01)
    assert small[0] < 0.01 and small[1] == 0


# -- operators -------------------------------------------------------------------

def test_ladder_action():
    jm = ladder_lowering(2).toarray()
    assert jm[1, 2] == pytest.approx(math.sqrt(2))
    assert jm[0, 1] == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("N,spacing", [(5, Spacing(1, 1)), (6, Spacing(1, 2)), (7, Spacing(2, 3)),
                                       (9, Spacing(3, 4))])
def test_angular_momentum_algebra(N, spacing):
    ops = build_collective_ops(build_partition(N, spacing))
    p = len(ops.J_minus)
    for a in range(p):
        jp, jm, jz = (_dense(x) for x in (ops.J_plus[a], ops.J_minus[a], ops.J_z[a]))
        np.testing.assert_array_equal(jp, jm.conj().T)
        np.testing.assert_allclose(jp @ jm - jm @ jp, 2 * jz, atol=1e-12)
        np.testing.assert_allclose(jz @ jp - jp @ jz, jp, atol=1e-12)
        np.testing.assert_allclose(jz @ jm - jm @ jz, -jm, atol=1e-12)
        cas = _dense(ops.casimir(a))
        j = ops.partition.sizes[a] / 2
        np.testing.assert_allclose(cas, j * (j + 1) * np.eye(len(cas)), atol=1e-10)
        for b in range(p):
            if a != b:
                for x in (ops.J_plus[a], ops.J_minus[a], ops.J_z[a]):
                    for y in (ops.J_plus[b], ops.J_minus[b], ops.J_z[b]):
                        assert np.abs(_dense(x @ y - y @ x)).max() < 1e-12


def test_total_spin_operators():
    part = build_partition(6, Spacing(2, 3))
    ops = build_collective_ops(part)
    sx, sy, sz = (_dense(o) for o in (ops.S_x, ops.S_y, ops.S_z))
    np.testing.assert_allclose(sx @ sy - sy @ sx, 1j * sz, atol=1e-12)
    np.testing.assert_allclose(_dense(ops.S2), sx @ sx + sy @ sy + sz @ sz, atol=1e-12)
    np.testing.assert_allclose(_dense(ops.transverse), sx @ sx + sy @ sy, atol=1e-12)


# -- generator --------------------------------------------------------------------

def _lindbladian(N, spacing):
    part = build_partition(N, spacing)
    return part, build_lindbladian(part, build_gamma_waveguide(N, spacing))


@pytest.mark.parametrize("N,spacing", [(4, Spacing(1, 1)), (5, Spacing(1, 2)), (6, Spacing(2, 3)),
                                       (7, Spacing(3, 4))])
def test_trace_preservation_random_hermitian(N, spacing, rng):
    part, L = _lindbladian(N, spacing)
    for _ in range(100):
        out = L.apply_dense(random_hermitian(part.dim, rng))
        assert abs(np.trace(out)) < 1e-13 * max(1.0, np.abs(out).max())


def test_block_rhs_matches_dense_generator(rng):
    part, L = _lindbladian(7, Spacing(2, 3))
    lay = layout_for(part)
    rho = lay.to_dense(lay.from_dense(random_density(part.dim, rng)))
    state = SuperspinState.from_dense(part, rho)
    np.testing.assert_allclose(L.apply(state).to_dense(), L.apply_dense(rho), atol=1e-12)


def test_single_dicke_ladder_rate():
    N = 6
    part, L = _lindbladian(N, Spacing(1, 1))
    j = N / 2
    ops = L.ops
    for k in range(N + 1):
        m = k - j
        state = SuperspinState.basis_state(part, (k,))
        dz = np.trace(_dense(ops.S_z) @ L.apply(state).to_dense()).real
        assert dz == pytest.approx(-(j + m) * (j - m + 1), abs=1e-12)


def test_single_qubit_decay_and_ground_fixed_point():
    part, L = _lindbladian(1, Spacing(1, 1))
    excited = SuperspinState.fully_inverted(part)
    assert L.apply(excited).to_dense()[1, 1] == pytest.approx(-1.0)
    ground = SuperspinState.ground(build_partition(6, Spacing(2, 3)))
    _, L6 = _lindbladian(6, Spacing(2, 3))
    assert np.all(L6.apply(ground).data == 0)


def test_generator_rejects_mismatch():
    part = build_partition(6, Spacing(2, 3))
    with pytest.raises(PreconditionError):
        build_lindbladian(part, build_gamma_waveguide(7, Spacing(2, 3)))
    with pytest.raises(SymmetryBrokenError):
        build_lindbladian(part, build_gamma_waveguide(6, Spacing(2, 3), disorder=[0.1] + [0] * 5))
    _, L = _lindbladian(5, Spacing(2, 3))
    with pytest.raises(PreconditionError):
        L.apply_dense(np.eye(3))


# -- state storage ------------------------------------------------------------------

def test_state_rejects_inter_manifold_coherence():
    part = build_partition(3, Spacing(1, 1))
    psi = np.zeros(part.dim)
    psi[0] = psi[1] = 1
    with pytest.raises(UnsupportedSectorError):
        SuperspinState.from_vector(part, psi)
    with pytest.raises(UnsupportedSectorError):
        SuperspinState.from_dense(part, np.outer(psi, psi) / 2)


def test_state_roundtrip_and_diagnostics(rng):
    part = build_partition(8, Spacing(1, 3))
    lay = layout_for(part)
    rho = lay.to_dense(lay.from_dense(random_density(part.dim, rng)))
    rho /= np.trace(rho).real
    state = SuperspinState.from_dense(part, rho)
    np.testing.assert_allclose(state.to_dense(), rho)
    assert state.trace() == pytest.approx(1.0)
    assert state.populations().sum() == pytest.approx(1.0)
    assert state.hermiticity_error() < 1e-14
    assert state.min_eigenvalue() > -1e-12
    state.validate()
