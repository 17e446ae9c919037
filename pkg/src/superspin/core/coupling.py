"""Dissipative and coherent coupling matrices for 1D baths."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import PreconditionError, SymmetryBrokenError
from .partition import Spacing


@dataclass(frozen=True, eq=False)
class CouplingModel:
    """Coupling rates of an array in units where ``gamma_1d`` sets the time scale.

    ``gamma`` is the N x N dissipative matrix and ``jcoh`` the optional
    coherent exchange matrix. The reduced p x p matrix is only defined when
    the positions are exactly commensurate.
    """

    N: int
    spacing: Spacing
    gamma: np.ndarray
    gamma_1d: float = 1.0
    jcoh: Optional[np.ndarray] = None
    positions: Optional[np.ndarray] = None
    _reduced: Optional[np.ndarray] = None

    @property
    def disordered(self) -> bool:
        return self._reduced is None

    @property
    def gamma_reduced(self) -> np.ndarray:
        if self._reduced is None:
            raise SymmetryBrokenError(
                "positional disorder breaks the partial permutational symmetry; "
                "no reduced coupling matrix exists"
            )
        return self._reduced

    def channels(self, tol=1e-12):
        """Eigen-decomposition of ``gamma`` into rates and jump coefficient vectors.

        Returns ``(rates, vectors)`` with ``vectors[:, mu]`` the coefficients of
        channel ``mu``; only rates above ``tol * gamma_1d * N`` are kept.
        """
        return eigen_channels(self.gamma, tol * self.gamma_1d * self.N)


def eigen_channels(matrix, cutoff):
    w, v = np.linalg.eigh(matrix)
    if w.min() < -abs(cutoff):
        raise PreconditionError(f"coupling matrix has eigenvalue {w.min():.3g} below -{cutoff:.3g}")
    keep = w > cutoff
    return w[keep], v[:, keep]


def _positions(N, disorder):
    x = np.arange(1, N + 1, dtype=float)
    if disorder is None:
        return x, False
    eps = np.asarray(disorder, dtype=float)
    if eps.shape != (N,):
        raise PreconditionError(f"disorder must have length N={N}, got shape {eps.shape}")
    return x + eps, bool(np.any(eps != 0.0))


def build_gamma_waveguide(N, spacing: Spacing, gamma_1d=1.0, disorder=None) -> CouplingModel:
    """``Gamma_ij = gamma_1d cos(kd |x_i - x_j|)`` with ``x_j = j + eps_j``."""
    x, broken = _positions(N, disorder)
    kd = spacing.kd
    gamma = gamma_1d * np.cos(kd * np.abs(x[:, None] - x[None, :]))
    reduced = None
    if not broken:
        a = np.arange(1, spacing.p + 1)
        reduced = gamma_1d * np.cos(kd * np.abs(a[:, None] - a[None, :]))
    return CouplingModel(N=N, spacing=spacing, gamma=gamma, gamma_1d=gamma_1d,
                         positions=x, _reduced=reduced)


def build_hcoh_waveguide(N, spacing: Spacing, gamma_1d=1.0, disorder=None) -> np.ndarray:
    """Coherent exchange ``J_ij = (gamma_1d / 2) sin(kd |x_i - x_j|)`` of an open waveguide."""
    x, _ = _positions(N, disorder)
    return 0.5 * gamma_1d * np.sin(spacing.kd * np.abs(x[:, None] - x[None, :]))


def with_hamiltonian(model: CouplingModel) -> CouplingModel:
    """Copy of ``model`` carrying the waveguide exchange Hamiltonian."""
    eps = None if model.positions is None else model.positions - np.arange(1, model.N + 1)
    jcoh = build_hcoh_waveguide(model.N, model.spacing, model.gamma_1d, eps)
    return CouplingModel(N=model.N, spacing=model.spacing, gamma=model.gamma,
                         gamma_1d=model.gamma_1d, jcoh=jcoh, positions=model.positions,
                         _reduced=model._reduced)


# ---------------------------------------------------------------------------
# ring resonator
# ---------------------------------------------------------------------------

def ring_reflectivity(L, kappa_c, c=1.0):
    """Round-trip field factor ``rbar**2`` from the cavity linewidth."""
    if L <= 0 or kappa_c <= 0:
        raise PreconditionError("ring needs L > 0 and kappa_c > 0")
    return 1.0 - kappa_c * L / (2.0 * c)


def ring_greens(z, z_src, omega, *, L, omega_r, kappa_c, mode_area=1.0, c=1.0):
    """Near-resonant Green's function of a lossy ring resonator.

    ``G = -A c^2 / (omega L) * cos(k_r (z - z_src)) / (Delta_omega + i kappa_c / 2)``
    with ``k_r = omega_r / c`` and ``Delta_omega = rbar^2 (omega - omega_r)``.
    Only meaningful when both numbers returned by :func:`ring_validity` are small.
    """
    r2 = ring_reflectivity(L, kappa_c, c)
    k_r = omega_r / c
    detuning = r2 * (omega - omega_r)
    pref = -mode_area * c**2 / (omega * L)
    return pref * np.cos(k_r * (np.asarray(z) - z_src)) / (detuning + 0.5j * kappa_c)


def ring_validity(omega, *, L, omega_r, kappa_c, c=1.0):
    """Return ``(delta_k * L, Delta_k * L)``; the closed form assumes both are << 1."""
    r2 = ring_reflectivity(L, kappa_c, c)
    if r2 <= 0:
        return math.inf, (omega - omega_r) * L / c
    return -math.log(r2), (omega - omega_r) * L / c


def ring_gamma_matrix(z, *, L, omega_r, kappa_c, gamma_1d=1.0, mode_area=1.0, c=1.0):
    """Dissipative couplings ``Gamma_ij`` from ``Im G`` at resonance.

    Normalised so the on-site rate is ``gamma_1d``; reproduces
    ``gamma_1d cos(k_r (z_i - z_j))``.
    """
    z = np.asarray(z, dtype=float)
    kw = dict(L=L, omega_r=omega_r, kappa_c=kappa_c, mode_area=mode_area, c=c)
    on_site = ring_greens(0.0, 0.0, omega_r, **kw).imag
    return gamma_1d * ring_greens(z[:, None], z[None, :], omega_r, **kw).imag / on_site
