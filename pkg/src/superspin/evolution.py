"""Time integration of the superspin master equation and scalar observables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import DOP853, RK45

from .core._kernels import axpy_inplace, axpy_into, hermitize_blocks
from .core.lindbladian import SuperspinLindbladian
from .core.state import SuperspinState
from .errors import IntegrationError, NumericalStateError, PreconditionError

# largest dt * lambda_max on the negative real axis for which classical RK4 is stable is ~2.785
RK4_STABILITY = 2.5
DARK_THRESHOLD = 1e-8


@dataclass(frozen=True)
class IntegratorConfig:
    """Time-stepping parameters; times in units of ``1 / gamma_1d``.

    ``method`` is ``"rk4"`` (fixed step, capped by the stiffness of the
    generator and halved on a tolerance breach) or ``"adaptive"``
    (embedded Runge-Kutta with ``rtol``/``atol``).
    """

    t_max: float
    dt: float = 1e-3
    method: str = "rk4"
    tol_trace: float = 1e-8
    tol_pos: float = 1e-8
    n_samples: int = 400
    rtol: float = 1e-8
    atol: float = 1e-11
    max_halvings: int = 6
    full_positivity_check: Optional[bool] = None

    def __post_init__(self):
        if not self.t_max > 0 or not self.dt > 0:
            raise PreconditionError(f"need t_max > 0 and dt > 0, got t_max={self.t_max}, dt={self.dt}")
        if self.tol_trace <= 0 or self.tol_pos <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise PreconditionError("tolerances must be positive")
        if self.method not in ("rk4", "adaptive"):
            raise PreconditionError(f"unknown method {self.method!r}; use 'rk4' or 'adaptive'")
        if self.n_samples < 2:
            raise PreconditionError("need at least two samples")

    def sample_times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_samples)


@dataclass(frozen=True)
class ObservableRecord:
    t: float
    R: float
    Sz: float
    S2: float
    s: float
    var_Sz: float
    xi_D: float
    populations: np.ndarray


@dataclass
class ObservableSeries:
    """Sampled observables; every field is an array over the sampling grid."""

    N: int
    t: np.ndarray
    R: np.ndarray
    Sz: np.ndarray
    S2: np.ndarray
    s: np.ndarray
    var_Sz: np.ndarray
    xi_D: np.ndarray
    populations: np.ndarray
    meta: dict = field(default_factory=dict)

    COLUMNS = ("t", "R", "Sz", "S2", "s", "var_Sz", "xi_D")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> ObservableRecord:
        return ObservableRecord(*(float(getattr(self, c)[i]) for c in self.COLUMNS),
                                populations=self.populations[i])

    def header(self):
        return list(self.COLUMNS) + [f"pop_m{m}" for m in range(self.populations.shape[1])]

    def table(self) -> np.ndarray:
        cols = [getattr(self, c) for c in self.COLUMNS]
        return np.column_stack(cols + [self.populations])

    @property
    def peak(self):
        """``(t, R)`` at the sampled maximum of the emission rate."""
        i = int(np.argmax(self.R))
        return float(self.t[i]), float(self.R[i])

    @classmethod
    def from_rows(cls, N, t, rows, meta=None):
        """Build from per-sample tuples ``(R, Sz, S2, var_Sz, transverse, populations)``."""
        R, Sz, S2, var, tr, pops = (np.array(x) for x in zip(*rows))
        s = spin_length_from_s2(S2)
        xi = squeezing_from_moments(N, var, tr)
        return cls(N=N, t=np.asarray(t, float), R=R, Sz=Sz, S2=S2, s=s, var_Sz=var,
                   xi_D=xi, populations=np.vstack(pops), meta=dict(meta or {}))


def spin_length_from_s2(S2, tol=1e-9):
    """Solve ``<S^2> = s (s + 1)`` for ``s``."""
    S2 = np.asarray(S2, dtype=float)
    if np.any(S2 < -tol):
        raise NumericalStateError(f"<S^2> = {S2.min():.3g} is negative")
    return 0.5 * (-1.0 + np.sqrt(1.0 + 4.0 * np.clip(S2, 0.0, None)))


def squeezing_from_moments(N, var_sz, transverse, tol=1e-12):
    """``xi_D = N (var S_z + 1/4) / <S_x^2 + S_y^2>``; NaN where the denominator vanishes."""
    var_sz = np.asarray(var_sz, dtype=float)
    transverse = np.asarray(transverse, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = N * (var_sz + 0.25) / transverse
    return np.where(transverse > tol, xi, np.nan)


def depth_bound(xi):
    """Entanglement-depth lower bound ``ceil(1 / xi_D) - 2``; ``None`` when xi is undefined."""
    if xi is None or not np.isfinite(xi) or xi <= 0:
        return None
    return int(math.ceil(1.0 / xi - 1e-12)) - 2


class Observables:
    """Precomputed trace weights for the scalar observables of a generator."""

    def __init__(self, lindbladian: SuperspinLindbladian):
        self.lindbladian = lindbladian
        part = lindbladian.partition
        lay = lindbladian.layout
        ops = lindbladian.ops
        self.N = part.N
        self.w_rate = lindbladian.emission_weights()
        self.w_s2 = lay.trace_weights(ops.S2)
        self.w_transverse = lay.trace_weights(ops.transverse)
        self.sz_diag = (lay.excitations[lay.order] - part.N / 2.0).astype(float)

    def moments(self, state: SuperspinState):
        diag = state.data[state.layout.diagonal_positions].real
        pops = np.add.reduceat(diag, state.layout.starts[:-1])
        sz = float(np.dot(self.sz_diag, diag))
        sz2 = float(np.dot(self.sz_diag**2, diag))
        return (state.expect(self.w_rate).real, sz, state.expect(self.w_s2).real,
                max(sz2 - sz * sz, 0.0), state.expect(self.w_transverse).real, pops)


def emission_rate(state: SuperspinState, lindbladian: SuperspinLindbladian) -> float:
    """``R = sum_ab G_ab Tr(J_a+ J_b- rho)`` in units of gamma_1d."""
    return float(state.expect(lindbladian.emission_weights()).real)


def spin_length(state: SuperspinState, ops):
    """``(s, m_s)`` with ``<S^2> = s (s + 1)`` and ``m_s = <S_z>``."""
    rho = state.layout
    s2 = state.expect(rho.trace_weights(ops.S2)).real
    sz = state.expect(rho.trace_weights(ops.S_z)).real
    return float(spin_length_from_s2(s2)), float(sz)


def dicke_squeezing(state: SuperspinState, ops):
    """``(xi_D, depth bound)``; ``(nan, None)`` if ``<S_x^2 + S_y^2>`` vanishes."""
    lay = state.layout
    sz = state.expect(lay.trace_weights(ops.S_z)).real
    sz2 = state.expect(lay.trace_weights(ops.S_z @ ops.S_z)).real
    tr = state.expect(lay.trace_weights(ops.transverse)).real
    xi = float(squeezing_from_moments(state.partition.N, max(sz2 - sz * sz, 0.0), tr))
    return xi, depth_bound(xi)


def is_dark(state, lindbladian, threshold=DARK_THRESHOLD):
    return emission_rate(state, lindbladian) < threshold * state.partition.N


def average_inverse_squeezing(state: SuperspinState, lindbladian: SuperspinLindbladian,
                              m_max=None, check_stationary=True, threshold=DARK_THRESHOLD):
    """Population-weighted ``1 / xi_D`` of the normalised excitation manifolds ``1..m_max``.

    Within one manifold ``var S_z = 0``, so ``1 / xi_{D,m} = 4 <S_x^2 + S_y^2>_m / N``.
    ``m_max`` defaults to ``N // 3``.
    """
    N = state.partition.N
    if check_stationary:
        R = emission_rate(state, lindbladian)
        if R >= threshold * N:
            raise PreconditionError(
                f"state is not stationary: emission rate {R:.3g} exceeds darkness threshold {threshold * N:.3g}"
            )
    m_max = N // 3 if m_max is None else int(m_max)
    lay = state.layout
    pos, w = lay.trace_weights(lindbladian.ops.transverse)
    K = np.searchsorted(lay.offsets, pos, side="right") - 1
    keep = (K >= 1) & (K <= m_max)
    return float(4.0 / N * np.dot(w[keep], state.data[pos[keep]]).real)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def _rk4_step(rhs, y, h, acc, tmp, k):
    rhs(y, k)
    axpy_into(acc, y, h / 6.0, k)
    axpy_into(tmp, y, h / 2.0, k)
    rhs(tmp, k)
    axpy_inplace(acc, h / 3.0, k)
    axpy_into(tmp, y, h / 2.0, k)
    rhs(tmp, k)
    axpy_inplace(acc, h / 3.0, k)
    axpy_into(tmp, y, h, k)
    rhs(tmp, k)
    axpy_inplace(acc, h / 6.0, k)
    y[:] = acc


def _check(state, t, cfg, full):
    diag = state.data[state.layout.diagonal_positions].real
    tr = diag.sum()
    if not np.isfinite(tr):
        return "non-finite state"
    if abs(tr - 1.0) > cfg.tol_trace:
        return f"trace drift {tr - 1.0:.3g} exceeds tol_trace={cfg.tol_trace}"
    lo = diag.min() if full is False else state.min_eigenvalue()
    if lo < -cfg.tol_pos:
        return f"negative eigenvalue {lo:.3g} exceeds tol_pos={cfg.tol_pos}"
    return None


def evolve(state0: SuperspinState, lindbladian: SuperspinLindbladian, config: IntegratorConfig,
           observers: Sequence[Callable] = ()):
    """Integrate ``d rho / dt = L[rho]`` from ``state0`` and sample observables.

    ``observers`` are called as ``f(t, state)`` at every sample time; the
    state passed in is a live view and must be copied if kept.

    Returns ``(ObservableSeries, final SuperspinState)``.
    """
    if state0.partition != lindbladian.partition:
        raise PreconditionError("initial state and generator belong to different partitions")
    obs = Observables(lindbladian)
    lay = lindbladian.layout
    full = config.full_positivity_check
    if full is None:
        full = lay.size <= 250_000
    problem = _check(state0, 0.0, config, full)
    if problem is not None:
        raise PreconditionError(f"initial state invalid: {problem}")
    times = config.sample_times()

    # the dissipator has real coefficients, so a real state is integrated in real arithmetic
    state = state0.as_real()
    rows = [obs.moments(state)]
    for f in observers:
        f(times[0], state)

    if config.method == "rk4":
        h_max = min(config.dt, RK4_STABILITY / max(lindbladian.max_rate, 1e-300))
        y = state.data
        acc, tmp, k = (np.empty_like(y) for _ in range(3))
        saved = np.empty_like(y)
        n_steps = 0
        for t0, t1 in zip(times[:-1], times[1:]):
            saved[:] = y
            for halving in range(config.max_halvings + 1):
                n = max(1, math.ceil((t1 - t0) / (h_max / 2**halving) - 1e-9))
                h = (t1 - t0) / n
                for _ in range(n):
                    _rk4_step(lindbladian.rhs, y, h, acc, tmp, k)
                    hermitize_blocks(y, lay.dims, lay.offsets)
                n_steps += n
                problem = _check(state, t1, config, full)
                if problem is None:
                    break
                y[:] = saved
            else:
                raise IntegrationError(problem, t1)
            rows.append(obs.moments(state))
            for f in observers:
                f(t1, state)
        meta = {"method": "rk4", "dt": h_max, "steps": n_steps}
    else:
        solver_cls = DOP853 if config.rtol < 1e-6 else RK45
        rhs = lindbladian.rhs
        solver = solver_cls(lambda t, y: rhs(y), 0.0, state.data.copy(), config.t_max,
                            rtol=config.rtol, atol=config.atol, first_step=config.dt)
        i = 1
        n_steps = 0
        while i < len(times):
            msg = solver.step()
            n_steps += 1
            if solver.status == "failed":
                raise IntegrationError(f"adaptive solver failed: {msg}", solver.t)
            dense = solver.dense_output()
            while i < len(times) and times[i] <= solver.t + 1e-14:
                state.data[:] = dense(times[i])
                hermitize_blocks(state.data, lay.dims, lay.offsets)
                problem = _check(state, times[i], config, full)
                if problem is not None:
                    raise IntegrationError(problem, times[i])
                rows.append(obs.moments(state))
                for f in observers:
                    f(times[i], state)
                i += 1
        meta = {"method": "adaptive", "steps": n_steps}

    if full is False:
        state.validate(tol_trace=config.tol_trace, tol_pos=config.tol_pos)
    series = ObservableSeries.from_rows(lindbladian.partition.N, times, rows, meta)
    return series, state
