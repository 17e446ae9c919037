import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from superspin.core import build_gamma_waveguide, build_partition
from superspin.core.partition import Spacing
from superspin.errors import PreconditionError
from superspin.liealg import (LOWERING, RAISING, ZED, AlgebraConsistencyError, SiteOperator, adjoint_matrices,
                              bracket, canonical_decomposition, close_algebra, default_max_dim,
                              detect_partition, directional_basis, directional_ops, jump_generators,
                              subspace_projector)

COMMENSURATE = [(1, 1), (1, 2), (2, 3), (1, 3), (3, 4), (1, 5)]


def coeffs(n):
    return st.lists(st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False),
                    min_size=n, max_size=n).filter(lambda c: max(abs(x) for x in c) > 1e-3)


@given(st.sampled_from([LOWERING, RAISING, ZED]), st.sampled_from([LOWERING, RAISING, ZED]), st.data())
def test_bracket_matches_dense_commutator(kx, ky, data):
    N = 3
    x = SiteOperator(kx, np.array(data.draw(coeffs(N))))
    y = SiteOperator(ky, np.array(data.draw(coeffs(N))))
    X, Y = x.to_dense(), y.to_dense()
    out = bracket(x, y)
    dense = X @ Y - Y @ X
    got = np.zeros_like(dense) if out is None else out.to_dense()
    np.testing.assert_allclose(got, dense, atol=1e-12)


def test_dagger_and_validation():
    op = SiteOperator(LOWERING, [1j, 2.0])
    np.testing.assert_allclose(op.dagger().to_dense(), op.to_dense().conj().T)
    with pytest.raises(PreconditionError):
        SiteOperator("flip", [1.0])
    with pytest.raises(PreconditionError):
        SiteOperator(ZED, [0.0, 0.0])


@pytest.mark.parametrize("n,p", COMMENSURATE)
def test_commensurate_closure(n, p):
    N = 4 * p
    spacing = Spacing(n, p)
    res = close_algebra(directional_ops(N, spacing.kd))
    assert res.closed
    assert res.dimension == 3 * p
    canon = canonical_decomposition(res)
    assert canon.p == p
    assert canon.matches(build_partition(N, spacing))


@pytest.mark.parametrize("n,p", COMMENSURATE)
def test_closure_independent_of_presentation(n, p):
    N = 4 * p
    spacing = Spacing(n, p)
    gamma = build_gamma_waveguide(N, spacing).gamma
    a = close_algebra(directional_ops(N, spacing.kd))
    b = close_algebra(jump_generators(gamma))
    assert a.dimension == b.dimension
    np.testing.assert_allclose(subspace_projector(a.zed_basis), subspace_projector(b.zed_basis), atol=1e-8)
    np.testing.assert_allclose(subspace_projector(a.lowering_basis), subspace_projector(b.lowering_basis),
                               atol=1e-8)


def test_incommensurate_spacing_is_open():
    res = close_algebra(directional_ops(12, 1.0))
    assert not res.closed
    assert res.dimension > 3 * 12 // 2
    assert detect_partition(12, 1.0) is None
    with pytest.raises(PreconditionError):
        canonical_decomposition(res)


def test_idempotents_are_orthogonal_indicators():
    res = close_algebra(directional_ops(12, 2 * math.pi / 3))
    canon = canonical_decomposition(res)
    E = canon.idempotents
    np.testing.assert_array_equal(E.sum(axis=0), np.ones(12))
    np.testing.assert_allclose(E @ E.T, np.diag(E.sum(axis=1)))
    for e in E:
        np.testing.assert_array_equal(e * e, e)
    assert canon.site_sets == ((1, 4, 7, 10), (2, 5, 8, 11), (3, 6, 9, 12))
    assert canon.signs[0] == (1.0, 1.0, 1.0, 1.0)


@given(st.integers(0, 2**32 - 1))
def test_decomposition_independent_of_seed(seed):
    res = close_algebra(directional_ops(8, 3 * math.pi / 4))
    canon = canonical_decomposition(res, seed=seed)
    assert canon.matches(build_partition(8, Spacing(3, 4)))


def test_alternating_signs_at_kd_pi():
    canon = detect_partition(6, math.pi)
    assert canon.site_sets == ((1, 2, 3, 4, 5, 6),)
    assert canon.signs[0] == (1.0, -1.0, 1.0, -1.0, 1.0, -1.0)


def test_adjoint_representation_satisfies_jacobi():
    basis = directional_basis(6, math.pi / 2)
    ad = adjoint_matrices(basis)
    n = len(basis)
    # ad is antisymmetric in its first two indices
    np.testing.assert_allclose(ad, -np.swapaxes(ad, 0, 1), atol=1e-12)
    # [ad_i, ad_j] = sum_k c_ij^k ad_k
    mats = np.swapaxes(ad, 1, 2)
    for i in range(n):
        for j in range(n):
            lhs = mats[i] @ mats[j] - mats[j] @ mats[i]
            rhs = np.tensordot(ad[i, j], mats, axes=1)
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_adjoint_rejects_unclosed_basis():
    basis = directional_basis(6, math.pi / 2, z_orders=(0,))
    with pytest.raises(AlgebraConsistencyError):
        adjoint_matrices(basis)


def test_closure_input_checks():
    with pytest.raises(PreconditionError):
        close_algebra([])
    with pytest.raises(PreconditionError):
        close_algebra([SiteOperator(LOWERING, [1.0]), SiteOperator(LOWERING, [1.0, 1.0])])
    with pytest.raises(PreconditionError):
        close_algebra(directional_ops(4, 1.0), max_dim=2)
    assert default_max_dim(12) == 21


def test_max_dim_controls_verdict():
    # kd = 1 rad at N = 12 generates every site operator: 3N = 36
    res = close_algebra(directional_ops(12, 1.0), max_dim=36)
    assert res.closed and res.dimension == 36
    assert res.as_dict()["dim_zed"] == 12


def test_quarter_wave_golden_example():
    N = 4
    res = close_algebra(directional_ops(N, math.pi / 2))
    assert res.closed and res.dimension == 6
    # the six named operators span the closed algebra
    basis = directional_basis(N, math.pi / 2)
    zed = np.array([b.coeffs for b in basis if b.kind == ZED])
    np.testing.assert_allclose(subspace_projector(res.zed_basis),
                               subspace_projector(np.linalg.qr(zed.T)[0].T), atol=1e-12)
    canon = detect_partition(6, math.pi / 2)
    assert canon.site_sets == ((1, 3, 5), (2, 4, 6))
    assert canon.signs == ((1.0, -1.0, 1.0), (1.0, -1.0, 1.0))


def test_quarter_wave_coefficients():
    o_l, o_r = directional_ops(4, math.pi / 2)
    np.testing.assert_allclose(o_l.coeffs, np.array([1j, -1, -1j, 1]) / 2, atol=1e-15)
    np.testing.assert_allclose(o_r.coeffs, o_l.coeffs.conj())


@pytest.mark.parametrize("N", [6, 9])
def test_two_thirds_examples(N):
    res = close_algebra(directional_ops(N, 2 * math.pi / 3))
    assert res.dimension == 9
    canon = canonical_decomposition(res)
    assert canon.site_sets == tuple(tuple(range(a, N + 1, 3)) for a in (1, 2, 3))
    assert all(set(g) == {1.0} for g in canon.signs)
