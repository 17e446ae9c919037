"""Acceptance checks. Each test prints one PASS/FAIL line, then asserts."""

import math
import time

import numpy as np
import pytest

from superspin.core import SuperspinState, build_gamma_waveguide, build_lindbladian, build_partition
from superspin.core.partition import Spacing
from superspin.darkstates import (dicke_decay_bound_check, dicke_state, directional_rate, find_dark_states,
                                  two_excitation_fidelity)
from superspin.evolution import (IntegratorConfig, average_inverse_squeezing, dicke_squeezing, evolve)
from superspin.liealg import canonical_decomposition, close_algebra, directional_ops
from superspin.oracle import OracleModel, disorder_scan, embed, evolve_full, fully_inverted, trace_distance

TWO_THIRDS = Spacing(2, 3)
LATE_N = list(range(6, 37, 6))


def report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nacceptance {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def superspin_run(N, spacing, config):
    part = build_partition(N, spacing)
    L = build_lindbladian(part, build_gamma_waveguide(N, spacing))
    series, final = evolve(SuperspinState.fully_inverted(part), L, config)
    return part, L, series, final


@pytest.fixture(scope="module")
def late_states():
    out = {}
    for N in LATE_N:
        _, L, _, final = superspin_run(N, TWO_THIRDS, IntegratorConfig(t_max=40.0, dt=1.0, n_samples=41))
        out[N] = (L, final)
    return out


def test_oracle_equivalence(capsys):
    cases = [(4, Spacing(1, 1)), (6, Spacing(2, 3)), (6, Spacing(1, 2)), (8, Spacing(1, 3)), (8, Spacing(3, 4))]
    cfg = IntegratorConfig(t_max=10.0, n_samples=50)
    start = time.perf_counter()
    worst = {}
    for N, spacing in cases:
        part = build_partition(N, spacing)
        coupling = build_gamma_waveguide(N, spacing)
        ours, ref = [], []
        evolve(SuperspinState.fully_inverted(part), build_lindbladian(part, coupling), cfg,
               observers=[lambda t, s: ours.append(s.to_dense())])
        evolve_full(OracleModel.from_coupling(coupling), fully_inverted(N), cfg,
                    observers=[lambda t, r: ref.append(r)])
        assert len(ours) == len(ref) == 50
        worst[(N, str(spacing))] = max(trace_distance(embed(a, part), b) for a, b in zip(ours, ref))
    elapsed = time.perf_counter() - start
    top = max(worst.values())
    report(capsys, 1, top < 1e-6 and elapsed < 120,
           f"max trace distance {top:.2e} over {len(cases)} cases, {elapsed:.1f} s")


def test_dicke_limit_conservation(capsys):
    _, _, series, _ = superspin_run(36, Spacing(1, 1), IntegratorConfig(t_max=10.0, n_samples=201))
    dev = float(np.abs(series.s - 18.0).max())
    report(capsys, 2, dev < 1e-6, f"max |s - 18| = {dev:.2e}")


def test_burst_scaling(capsys):
    Ns = [10, 20, 40]
    peaks = []
    for N in Ns:
        _, _, series, _ = superspin_run(N, Spacing(1, 1), IntegratorConfig(t_max=1.0, dt=1e-4, n_samples=2001))
        peaks.append(series.R.max())
    slope = np.polyfit(np.log(Ns), np.log(peaks), 1)[0]
    report(capsys, 3, abs(slope - 2.0) <= 0.1, f"fitted exponent {slope:.3f}")


def test_fig2a_shape(capsys):
    start = time.perf_counter()
    rows = []
    for N in (15, 30, 90):
        _, _, series, _ = superspin_run(N, TWO_THIRDS, IntegratorConfig(t_max=0.4, dt=0.0025, n_samples=161))
        t_peak, R_peak = series.peak
        rows.append((N, t_peak, R_peak, R_peak / series.R[0]))
    elapsed = time.perf_counter() - start
    ratios_ok = all(r > 1 for *_, r in rows)
    interior = all(0 < t < 0.4 for _, t, _, _ in rows)
    taller = all(a[2] < b[2] for a, b in zip(rows, rows[1:]))
    # peak times compared in collective units N gamma t
    later = all(a[0] * a[1] < b[0] * b[1] for a, b in zip(rows, rows[1:]))
    detail = "; ".join(f"N={N} t={t:.4g} Nt={N * t:.4g} ratio={r:.3f}" for N, t, _, r in rows)
    report(capsys, 4, ratios_ok and interior and taller and later and elapsed < 600,
           f"{detail}; {elapsed:.0f} s")


def test_two_excitation_fidelity(capsys):
    errs = []
    for N in (6, 12, 18, 24, 30, 36):
        (rep,) = find_dark_states(build_partition(N, TWO_THIRDS), 2)
        errs.append(abs(rep.fidelity - two_excitation_fidelity(N)))
        if N == 6:
            f6 = rep.fidelity
    ok = max(errs) < 1e-10 and abs(f6 - 0.9) < 1e-10
    report(capsys, 5, ok, f"max deviation {max(errs):.2e}, F(N=6) = {f6:.15f}")


def test_dark_state_census(capsys):
    bad = []
    for N in (6, 9, 12):
        part = build_partition(N, TWO_THIRDS)
        for m in range(1, N + 1):
            count = len(find_dark_states(part, m))
            if count != (1 if m <= N // 3 else 0):
                bad.append((N, m, count))
    report(capsys, 6, not bad, f"mismatches {bad}" if bad else "one per m <= N/3, none above")


def test_dicke_decay_bound(capsys):
    worst_gap, worst_m1 = -math.inf, 0.0
    ok = True
    for N in (6, 12, 24):
        worst_m1 = max(worst_m1, directional_rate(N, 1, TWO_THIRDS.kd), directional_rate(N, 1, TWO_THIRDS.kd, -1))
        for m in (2, 3):
            c = dicke_decay_bound_check(N, m, TWO_THIRDS)
            ok &= c.satisfied
            worst_gap = max(worst_gap, max(c.rate_left, c.rate_right) - c.bound)
    ok &= worst_m1 < 1e-12
    report(capsys, 7, ok, f"max(rate - bound) = {worst_gap:.2e}, max m=1 rate = {worst_m1:.2e}")


def test_squeezing_trend(capsys, late_states):
    inv = np.array([average_inverse_squeezing(final, L, check_stationary=False) for L, final in late_states.values()])
    monotone = bool(np.all(np.diff(inv) > 0))
    slope = np.polyfit(LATE_N, inv, 1)[0]
    dicke_errs = []
    for N in LATE_N:
        part = build_partition(N, TWO_THIRDS)
        L = late_states[N][0]
        xi, _ = dicke_squeezing(SuperspinState.from_vector(part, dicke_state(part, N // 2)), L.ops)
        dicke_errs.append(abs(1 / xi - (N + 2)))
    ok = monotone and slope > 0 and max(dicke_errs) < 1e-10
    report(capsys, 8, ok, f"inverse squeezing {np.round(inv, 3).tolist()}, slope {slope:.3f}, "
                          f"Dicke reference error {max(dicke_errs):.1e}")


def test_lie_closure(capsys):
    dims, matched = {}, True
    for n, p in [(1, 1), (1, 2), (2, 3), (1, 3), (3, 4), (1, 5)]:
        N = 4 * p
        spacing = Spacing(n, p)
        res = close_algebra(directional_ops(N, spacing.kd))
        dims[f"{n}/{p}"] = res.dimension if res.closed else None
        matched &= res.closed and res.dimension == 3 * p
        matched &= res.closed and canonical_decomposition(res).matches(build_partition(N, spacing))
    off = close_algebra(directional_ops(12, 1.0))
    ok = matched and not off.closed and off.dimension > 3 * 12 // 2
    report(capsys, 9, ok, f"dims {dims}; kd=1 rad N=12 closed={off.closed} dim>={off.dimension}")


def test_disorder_robustness(capsys):
    sigmas = [round(0.01 * k, 2) for k in range(1, 10)]
    start = time.perf_counter()
    rep = disorder_scan(6, TWO_THIRDS, sigmas, 200, seed=2024, config=IntegratorConfig(t_max=10.0, n_samples=101))
    elapsed = time.perf_counter() - start
    f = np.array([r.min_fidelity for r in rep.rows])
    fse = np.array([r.min_fidelity_se for r in rep.rows])
    ratio = np.array([r.peak_ratio for r in rep.rows])
    slack = 2 * np.sqrt(fse[1:] ** 2 + fse[:-1] ** 2)
    monotone = bool(np.all(np.diff(f) <= slack))
    ok = monotone and f[0] >= 0.85 and np.all(np.abs(ratio - 1) < 0.01) and elapsed < 300
    report(capsys, 10, ok, f"min fidelity {np.round(f, 4).tolist()}, max |ratio-1| {np.abs(ratio - 1).max():.4f}, "
                           f"{elapsed:.0f} s")


def test_ground_population_trend(capsys, late_states):
    pops = np.array([final.populations()[0] for _, final in late_states.values()])
    slope = np.polyfit(np.log(LATE_N), np.log(pops), 1)[0]
    ok = bool(np.all(np.diff(pops) < 0)) and -1.1 <= slope <= -0.5
    report(capsys, 11, ok, f"ground populations {np.round(pops, 4).tolist()}, exponent {slope:.3f}")
