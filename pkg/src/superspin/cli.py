"""Command-line front end: scenario configs, presets and machine-readable outputs.

Every run writes into its output directory

``manifest.json``
    resolved config, package and library versions, seed, wall time, output list
``series.csv``
    sampled observables, header ``t,R,Sz,S2,s,var_Sz,xi_D,pop_m0,...,pop_mN``
``report.json``
    mode-specific results (dark-state vectors, closure data, disorder table, ...)

Flags fall back to environment variables ``SUPERSPIN_CONFIG``, ``SUPERSPIN_OUT``,
``SUPERSPIN_SEED`` and ``SUPERSPIN_WORKERS``; an explicit flag always wins.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import importlib.metadata
import json
import math
import os
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import (ConfigError, IntegrationError, InvalidModelError, NumericalStateError,
                     PreconditionError, SuperspinError, SymmetryBrokenError, UnsupportedSectorError)

ENV_PREFIX = "SUPERSPIN_"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
U64_MAX = 2**64 - 1

MODES = ("superspin", "oracle", "trajectories", "liealg", "darkstates", "disorder")
SUBCOMMAND_MODE = {"simulate": "superspin", "oracle-compare": "oracle", "trajectories": "trajectories",
                   "liealg": "liealg", "darkstates": "darkstates", "disorder-scan": "disorder"}

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}


def _block(props):
    return {"type": "object", "additionalProperties": False, "properties": props}


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "superspin scenario",
    "type": "object",
    "additionalProperties": False,
    "required": ["N"],
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "mode": {"enum": list(MODES)},
        "N": {"type": "integer", "minimum": 1},
        "spacing": {"type": "string", "pattern": r"^\s*[0-9]+\s*(/\s*[0-9]+\s*)?$"},
        "kd": {"type": "number"},
        "gamma_1d": _pos,
        "t_max": _pos,
        "dt": _pos,
        "n_samples": {"type": "integer", "minimum": 2},
        "method": {"enum": ["rk4", "adaptive"]},
        "rtol": _pos,
        "atol": _pos,
        "tol_trace": _pos,
        "tol_pos": _pos,
        "initial_state": {"type": "string", "pattern": "^(fully_inverted|ground|dicke:[0-9]+)$"},
        "observables": {"type": "array", "uniqueItems": True,
                        "items": {"enum": ["R", "Sz", "S2", "s", "var_Sz", "xi_D", "populations"]}},
        "seed": {"type": "integer", "minimum": 0, "maximum": U64_MAX},
        "workers": {"type": "integer", "minimum": 1},
        "output": {"type": "string"},
        "analysis": _block({"dark_states": {"type": "boolean"},
                            "m_max": {"type": "integer", "minimum": 0}}),
        "oracle": _block({"include_hamiltonian": {"type": "boolean"}, "gamma_local": _nonneg,
                          "allow_large": {"type": "boolean"}, "tolerance": _pos}),
        "trajectories": _block({"n_traj": {"type": "integer", "minimum": 1},
                                "include_hamiltonian": {"type": "boolean"}, "gamma_local": _nonneg,
                                "allow_large": {"type": "boolean"}}),
        "darkstates": _block({"m": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                              "general": {"type": "boolean"},
                              "decay_bound_m": {"type": "array", "items": {"type": "integer", "minimum": 1}}}),
        "liealg": _block({"max_dim": {"type": "integer", "minimum": 3},
                          "generators": {"enum": ["directional", "jumps"]}}),
        "disorder": _block({"sigmas": {"type": "array", "minItems": 1, "items": _nonneg},
                            "n_realizations": {"type": "integer", "minimum": 1},
                            "gamma_local": _nonneg, "m_max": {"type": "integer", "minimum": 0},
                            "allow_large": {"type": "boolean"}}),
    },
}

PRESET_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "figure", "description", "runs"],
    "properties": {
        "name": {"type": "string"},
        "figure": {"type": "string"},
        "description": {"type": "string"},
        "table": {"type": "array", "items": {"type": "string"}},
        "runs": {"type": "array", "minItems": 1, "items": CONFIG_SCHEMA},
    },
}

DEFAULTS = {
    "spacing": "1/1", "gamma_1d": 1.0, "t_max": 10.0, "dt": 1e-3, "n_samples": 400, "method": "rk4",
    "rtol": 1e-8, "atol": 1e-11, "tol_trace": 1e-8, "tol_pos": 1e-8, "initial_state": "fully_inverted",
    "observables": ["R", "Sz", "S2", "s", "var_Sz", "xi_D", "populations"], "seed": 0, "workers": 1,
}
BLOCK_DEFAULTS = {
    "superspin": ("analysis", {"dark_states": False}),
    "oracle": ("oracle", {"include_hamiltonian": False, "gamma_local": 0.0, "allow_large": False,
                          "tolerance": 1e-6}),
    "trajectories": ("trajectories", {"n_traj": 500, "include_hamiltonian": False, "gamma_local": 0.0,
                                      "allow_large": False}),
    "darkstates": ("darkstates", {"general": False}),
    "liealg": ("liealg", {"generators": "directional"}),
    "disorder": ("disorder", {"sigmas": [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09],
                              "n_realizations": 200, "gamma_local": 0.0, "allow_large": False}),
}


class NumericalFailure(SuperspinError):
    """A run finished but one of its numerical acceptance checks failed."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _schema_message(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"config {where}: {err.message}"


def validate_config(raw: dict, schema=CONFIG_SCHEMA) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(raw), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        raise ConfigError("; ".join(_schema_message(e) for e in errors))


def resolve_config(raw: dict, mode: str = None) -> dict:
    """Validate, check mode consistency and fill defaults; returns a new dict."""
    validate_config(raw)
    cfg = copy.deepcopy(raw)
    if mode is not None:
        if cfg.get("mode", mode) != mode:
            raise ConfigError(f"config mode {cfg['mode']!r} does not match the subcommand (mode {mode!r})")
        cfg["mode"] = mode
    if "mode" not in cfg:
        raise ConfigError("config must name a mode when run as a preset")
    mode = cfg["mode"]
    if "kd" in cfg:
        if mode != "liealg":
            raise ConfigError("a floating-point kd is accepted only in liealg mode; use spacing 'n/p'")
        if "spacing" in cfg:
            raise ConfigError("give either spacing or kd, not both")
    for key, value in DEFAULTS.items():
        if key == "spacing" and "kd" in cfg:
            continue
        cfg.setdefault(key, copy.deepcopy(value))
    if mode in BLOCK_DEFAULTS:
        name, defaults = BLOCK_DEFAULTS[mode]
        block = cfg.setdefault(name, {})
        for key, value in defaults.items():
            block.setdefault(key, copy.deepcopy(value))
    for name, block_mode in (("oracle", "oracle"), ("trajectories", "trajectories"), ("darkstates", "darkstates"),
                             ("liealg", "liealg"), ("disorder", "disorder"), ("analysis", "superspin")):
        if name in cfg and mode != block_mode:
            raise ConfigError(f"block {name!r} does not apply to mode {mode!r}")
    init = cfg["initial_state"]
    if init.startswith("dicke:") and int(init.split(":")[1]) > cfg["N"]:
        raise ConfigError(f"initial_state {init} needs m <= N = {cfg['N']}")
    if "spacing" in cfg:
        from .core.partition import Spacing
        try:
            Spacing.parse(cfg["spacing"])
        except PreconditionError as exc:
            raise ConfigError(f"config spacing: {exc}") from exc
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def _env(name):
    value = os.environ.get(ENV_PREFIX + name)
    return value if value not in (None, "") else None


def _int_setting(flag, env_name, lo, hi):
    value = flag if flag is not None else _env(env_name)
    if value is None:
        return None
    try:
        value = int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{ENV_PREFIX}{env_name} / --{env_name.lower()} must be an integer, got {value!r}") from exc
    if not lo <= value <= hi:
        raise ConfigError(f"--{env_name.lower()} must lie in [{lo}, {hi}], got {value}")
    return value


def _overrides(args):
    return {"seed": _int_setting(args.seed, "SEED", 0, U64_MAX),
            "workers": _int_setting(args.workers, "WORKERS", 1, 4096)}


def _apply_overrides(cfg, overrides):
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return "%.17g" % x


def write_series_csv(path, series) -> None:
    table = series.table()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(series.header()) + "\n")
        for row in table:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def validate_series_csv(path, series, tol=1e-6) -> None:
    """Re-read a written CSV and check it against ``series`` and the record invariants."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != series.header():
        raise NumericalFailure(f"{path}: header does not match {','.join(series.header())}")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    expected = series.table()
    if data.shape != expected.shape:
        raise NumericalFailure(f"{path}: {data.shape[0]} rows written, {expected.shape[0]} expected")
    same = (data == expected) | (np.isnan(data) & np.isnan(expected))
    if not same.all():
        raise NumericalFailure(f"{path}: values do not round-trip at 17 significant digits")
    N = series.N
    R, s, pops = data[:, 1], data[:, 4], data[:, 7:]
    if np.any(R < -tol):
        raise NumericalFailure(f"{path}: emission rate {R.min():.3g} below -{tol}")
    if np.any(s > N / 2 + tol):
        raise NumericalFailure(f"{path}: spin length {s.max():.6g} exceeds N/2 = {N / 2}")
    drift = np.abs(pops.sum(axis=1) - 1.0).max()
    if drift > tol:
        raise NumericalFailure(f"{path}: manifold populations sum to 1 only within {drift:.3g}")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    return x


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _versions():
    out = {"superspin": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "numba", "jsonschema"):
        out[dist] = importlib.metadata.version(dist)
    return out


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def _integrator(cfg):
    from .evolution import IntegratorConfig
    return IntegratorConfig(t_max=cfg["t_max"], dt=cfg["dt"], method=cfg["method"], tol_trace=cfg["tol_trace"],
                            tol_pos=cfg["tol_pos"], n_samples=cfg["n_samples"], rtol=cfg["rtol"], atol=cfg["atol"])


def _spacing(cfg):
    from .core.partition import Spacing
    return Spacing.parse(cfg["spacing"])


def _superspin_setup(cfg):
    from .core import SuperspinState, build_gamma_waveguide, build_lindbladian, build_partition
    from .darkstates import dicke_state
    spacing = _spacing(cfg)
    partition = build_partition(cfg["N"], spacing)
    coupling = build_gamma_waveguide(cfg["N"], spacing, cfg["gamma_1d"])
    lindbladian = build_lindbladian(partition, coupling)
    init = cfg["initial_state"]
    if init == "fully_inverted":
        state0 = SuperspinState.fully_inverted(partition)
    elif init == "ground":
        state0 = SuperspinState.ground(partition)
    else:
        state0 = SuperspinState.from_vector(partition, dicke_state(partition, int(init.split(":")[1])))
    return partition, coupling, lindbladian, state0


def _final_summary(series, cfg):
    keys = set(cfg["observables"])
    last = series[len(series) - 1]
    out = {"t": last.t}
    for k in ("R", "Sz", "S2", "s", "var_Sz", "xi_D"):
        if k in keys:
            out[k] = getattr(last, k)
    if "populations" in keys:
        out["populations"] = last.populations
    t_peak, r_peak = series.peak
    return {"final": out, "peak": {"t": t_peak, "R": r_peak, "ratio_to_initial": r_peak / series.R[0]
                                   if series.R[0] > 0 else None}}


def run_superspin(cfg, out: Path):
    from .evolution import (DARK_THRESHOLD, average_inverse_squeezing, depth_bound, evolve, is_dark)
    partition, coupling, lindbladian, state0 = _superspin_setup(cfg)
    series, final = evolve(state0, lindbladian, _integrator(cfg))
    write_series_csv(out / "series.csv", series)
    validate_series_csv(out / "series.csv", series)
    write_emission_csv(out / "emission.csv", series)
    N = cfg["N"]
    analysis = cfg["analysis"]
    m_max = analysis.get("m_max", N // 3)
    report = {"mode": "superspin", "N": N, "spacing": str(partition.spacing),
              "sizes": list(partition.sizes), "dimension": partition.dim, "storage": lindbladian.layout.size,
              **_final_summary(series, cfg), "integration": series.meta}
    dark = is_dark(final, lindbladian)
    pops = final.populations()
    report["late_time"] = {
        "dark": dark, "threshold": DARK_THRESHOLD * N, "ground_population": float(pops[0]),
        "population_at_least_N_over_6": float(pops[math.ceil(N / 6):].sum()),
        "average_inverse_squeezing": average_inverse_squeezing(final, lindbladian, m_max=m_max,
                                                               check_stationary=False),
        "m_max": m_max, "xi_D": float(series.xi_D[-1]), "depth_bound": depth_bound(float(series.xi_D[-1])),
    }
    if analysis["dark_states"]:
        report["dark_states"] = _dark_overlaps(partition, final, m_max)
    write_json(out / "report.json", report)
    return ["series.csv", "emission.csv", "report.json"]


def write_emission_csv(path, series) -> None:
    """Emission curve raw and scaled two ways: per qubit and by its own peak."""
    R = series.R
    peak = R.max()
    with open(path, "w", newline="") as fh:
        fh.write("t,R,R_per_N,R_over_peak\n")
        for t, r in zip(series.t, R):
            fh.write(",".join(_fmt(x) for x in (t, r, r / series.N, r / peak if peak > 0 else 0.0)) + "\n")


def _dark_overlaps(partition, final, m_max):
    from .darkstates import dark_support_residual, find_dark_states
    sp_ = partition.spacing
    if sp_.p != 3 or sp_.n % 2 or partition.N % 3:
        return {"skipped": "symmetric dark-state construction needs kd = 2pi/3 family and N divisible by 3"}
    reports = [r for m in range(1, partition.N // 3 + 1) for r in find_dark_states(partition, m)]
    lay = final.layout
    rows = []
    for r in reports:
        v = r.vector[lay.block_indices(r.m)]
        rows.append({"m": r.m, "population": float(np.vdot(v, final.block(r.m) @ v).real),
                     "fidelity_vs_dicke": r.fidelity, "xi_D": r.xi_D, "residual": r.residual})
    return {"states": rows, "residual_outside": dark_support_residual(final, reports),
            **{f"fidelity_m{m}": next((r["fidelity_vs_dicke"] for r in rows if r["m"] == m), None)
               for m in (2, 3)}}


def run_oracle(cfg, out: Path):
    from .evolution import evolve
    from .oracle import OracleModel, embed, evolve_full, trace_distance
    partition, coupling, lindbladian, state0 = _superspin_setup(cfg)
    block = cfg["oracle"]
    model = OracleModel.from_coupling(coupling, include_hamiltonian=block["include_hamiltonian"],
                                      gamma_local=block["gamma_local"])
    integ = _integrator(cfg)
    embedded = []
    series, _ = evolve(state0, lindbladian, integ, observers=[lambda t, s: embedded.append(embed(s, partition))])
    k = iter(range(len(embedded)))
    distances = []
    full_series, _ = evolve_full(model, embed(state0, partition), integ,
                                 observers=[lambda t, rho: distances.append(trace_distance(embedded[next(k)], rho))],
                                 allow_large=block["allow_large"])
    write_series_csv(out / "series.csv", series)
    validate_series_csv(out / "series.csv", series)
    write_series_csv(out / "series_oracle.csv", full_series)
    validate_series_csv(out / "series_oracle.csv", full_series)
    worst = float(max(distances))
    report = {"mode": "oracle", "N": cfg["N"], "spacing": str(partition.spacing),
              "include_hamiltonian": block["include_hamiltonian"], "gamma_local": block["gamma_local"],
              "max_trace_distance": worst, "tolerance": block["tolerance"],
              "trace_distance": {"t": series.t, "value": distances},
              "max_abs_diff": {c: float(np.nanmax(np.abs(getattr(series, c) - getattr(full_series, c))))
                               for c in ("R", "Sz", "S2", "s")}}
    write_json(out / "report.json", report)
    files = ["series.csv", "series_oracle.csv", "report.json"]
    dissipative = not block["include_hamiltonian"] and block["gamma_local"] == 0
    if dissipative and worst >= block["tolerance"]:
        raise NumericalFailure(f"oracle trace distance {worst:.3g} exceeds tolerance {block['tolerance']:.3g}",
                               files)
    return files


def run_trajectories(cfg, out: Path):
    from .core import build_gamma_waveguide, build_partition
    from .oracle import OracleModel, evolve_trajectories
    partition = build_partition(cfg["N"], _spacing(cfg))
    coupling = build_gamma_waveguide(cfg["N"], partition.spacing, cfg["gamma_1d"])
    block = cfg["trajectories"]
    model = OracleModel.from_coupling(coupling, include_hamiltonian=block["include_hamiltonian"],
                                      gamma_local=block["gamma_local"])
    psi0 = _pure_full_initial(cfg, partition)
    series = evolve_trajectories(model, psi0, _integrator(cfg), n_traj=block["n_traj"], seed=cfg["seed"],
                                 workers=cfg["workers"], allow_large=block["allow_large"])
    write_series_csv(out / "series.csv", series)
    validate_series_csv(out / "series.csv", series)
    err = series.meta["stderr"]
    with open(out / "series_stderr.csv", "w", newline="") as fh:
        fh.write("t," + ",".join(err) + "\n")
        for i, t in enumerate(series.t):
            fh.write(",".join(_fmt(x) for x in [t] + [err[c][i] for c in err]) + "\n")
    report = {"mode": "trajectories", "N": cfg["N"], "spacing": str(partition.spacing),
              "n_traj": block["n_traj"], "seed": cfg["seed"], "mean_jumps": series.meta.get("mean_jumps"),
              **_final_summary(series, cfg)}
    write_json(out / "report.json", report)
    return ["series.csv", "series_stderr.csv", "report.json"]


def _pure_full_initial(cfg, partition):
    from .darkstates import dicke_state
    from .oracle import embedding_isometry
    init = cfg["initial_state"]
    N = cfg["N"]
    psi = np.zeros(2**N, dtype=complex)
    if init == "fully_inverted":
        psi[-1] = 1.0
    elif init == "ground":
        psi[0] = 1.0
    else:
        psi = embedding_isometry(partition) @ dicke_state(partition, int(init.split(":")[1]))
    return psi


def run_darkstates(cfg, out: Path):
    from .core import build_partition
    from .darkstates import dicke_decay_bound_check, find_dark_states, find_dark_states_general
    partition = build_partition(cfg["N"], _spacing(cfg))
    block = cfg["darkstates"]
    ms = block.get("m", list(range(cfg["N"] + 1)))
    if any(m > cfg["N"] for m in ms):
        raise ConfigError(f"darkstates m values must not exceed N = {cfg['N']}")
    search = find_dark_states_general if block["general"] else find_dark_states
    manifolds = []
    for m in ms:
        found = search(partition, m)
        manifolds.append({"m": m, "count": len(found), "states": [r.as_dict(partition) for r in found]})
    report = {"mode": "darkstates", "N": cfg["N"], "spacing": str(partition.spacing), "general": block["general"],
              "census": {str(d["m"]): d["count"] for d in manifolds}, "manifolds": manifolds}
    if "decay_bound_m" in block:
        checks = []
        for m in block["decay_bound_m"]:
            c = dicke_decay_bound_check(cfg["N"], m, partition.spacing)
            checks.append({"m": m, "rate_left": c.rate_left, "rate_right": c.rate_right, "bound": c.bound,
                           "satisfied": c.satisfied})
        report["decay_bound"] = checks
    write_json(out / "report.json", report)
    return ["report.json"]


def run_liealg(cfg, out: Path):
    from .core import build_partition
    from .liealg import canonical_decomposition, close_algebra, directional_ops, jump_generators
    N = cfg["N"]
    block = cfg["liealg"]
    partition = None
    if "kd" in cfg:
        kd = float(cfg["kd"])
    else:
        partition = build_partition(N, _spacing(cfg))
        kd = partition.spacing.kd
    if block["generators"] == "directional":
        gens = directional_ops(N, kd)
    else:
        j = np.arange(1, N + 1)
        gens = jump_generators(cfg["gamma_1d"] * np.cos(kd * np.abs(j[:, None] - j[None, :])))
    res = close_algebra(gens, max_dim=block.get("max_dim"))
    report = {"mode": "liealg", "N": N, "kd": kd, "spacing": cfg.get("spacing"), "closure": res.as_dict()}
    if res.closed:
        canon = canonical_decomposition(res)
        report["canonical_partition"] = canon.as_dict()
        if partition is not None:
            report["matches_build_partition"] = canon.matches(partition)
    write_json(out / "report.json", report)
    return ["report.json"]


def run_disorder(cfg, out: Path):
    from .oracle import disorder_scan
    block = cfg["disorder"]
    report = disorder_scan(cfg["N"], _spacing(cfg), block["sigmas"], block["n_realizations"], cfg["seed"],
                           _integrator(cfg), gamma_1d=cfg["gamma_1d"], gamma_local=block["gamma_local"],
                           m_max=block.get("m_max"), workers=cfg["workers"], allow_large=block["allow_large"])
    cols = ["sigma", "min_fidelity", "min_fidelity_se", "peak_ratio", "peak_ratio_se", "inv_squeezing",
            "inv_squeezing_se", "n_realizations"]
    with open(out / "disorder.csv", "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in report.rows:
            fh.write(",".join(_fmt(getattr(row, c)) for c in cols) + "\n")
    write_json(out / "report.json", {"mode": "disorder", **report.as_dict()})
    return ["disorder.csv", "report.json"]


RUNNERS = {"superspin": run_superspin, "oracle": run_oracle, "trajectories": run_trajectories,
           "darkstates": run_darkstates, "liealg": run_liealg, "disorder": run_disorder}


def execute(cfg: dict, out: Path, command: str) -> dict:
    """Run one resolved config into ``out``; always writes the manifest."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "config": cfg, "versions": _versions(), "seed": cfg["seed"],
                "workers": cfg["workers"], "status": "running"}
    t0 = time.perf_counter()
    try:
        files = RUNNERS[cfg["mode"]](cfg, out)
        manifest["status"] = "ok"
    except NumericalFailure as exc:
        manifest["status"] = "numerical_failure"
        manifest["error"] = str(exc.args[0])
        files = exc.args[1] if len(exc.args) > 1 else []
        raise
    except BaseException as exc:
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        files = []
        raise
    finally:
        manifest["wall_time_s"] = time.perf_counter() - t0
        manifest["outputs"] = files
        write_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _preset_files():
    root = resources.files("superspin") / "presets"
    return sorted((p for p in root.iterdir() if p.name.endswith(".json")), key=lambda p: p.name)


def load_preset(name: str) -> dict:
    for p in _preset_files():
        if p.name == f"{name}.json":
            preset = json.loads(p.read_text())
            validate_config(preset, PRESET_SCHEMA)
            return preset
    known = ", ".join(p.name[:-5] for p in _preset_files())
    raise ConfigError(f"unknown preset {name!r}; available: {known}")


def list_presets() -> str:
    lines = []
    for p in _preset_files():
        preset = json.loads(p.read_text())
        lines.append(f"{preset['name']:8s} {preset['figure']}: {preset['description']}")
    return "\n".join(lines)


def _lookup(report, dotted):
    cur = report
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def run_preset(name: str, out: Path, overrides: dict) -> None:
    preset = load_preset(name)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, raw in enumerate(preset["runs"]):
        cfg = _apply_overrides(resolve_config(raw), overrides)
        run_name = cfg.get("name", f"run{i:02d}")
        execute(cfg, out / run_name, f"preset {name}")
        if preset.get("table"):
            with open(out / run_name / "report.json") as fh:
                report = json.load(fh)
            rows.append([run_name] + [_lookup(report, k) for k in preset["table"]])
    if preset.get("table"):
        with open(out / "table.csv", "w", newline="") as fh:
            fh.write(",".join(["run"] + preset["table"]) + "\n")
            for row in rows:
                fh.write(",".join(row[:1] + ["" if v is None else (_fmt(v) if isinstance(v, (int, float))
                                                                    and not isinstance(v, bool) else str(v))
                                             for v in row[1:]]) + "\n")
    write_json(out / "preset.json", {"preset": preset, "versions": _versions(), "overrides": overrides})


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="superspin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"superspin {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"scenario JSON (env {ENV_PREFIX}CONFIG)")
    common.add_argument("--out", help=f"output directory (env {ENV_PREFIX}OUT)")
    common.add_argument("--seed", help=f"RNG seed, unsigned 64-bit (env {ENV_PREFIX}SEED)")
    common.add_argument("--workers", help=f"worker processes (env {ENV_PREFIX}WORKERS), default 1")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMAND_MODE:
        sub.add_parser(name, parents=[common], help=f"run a {SUBCOMMAND_MODE[name]} scenario")
    pre = sub.add_parser("preset", parents=[common], help="run a figure-reproduction preset")
    pre.add_argument("name")
    sub.add_parser("list-presets", help="list available presets")
    return parser


def _output_dir(args, cfg=None) -> Path:
    out = args.out or _env("OUT") or (cfg or {}).get("output")
    return Path(out or "superspin_out")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list-presets":
        print(list_presets())
        return EXIT_OK
    try:
        overrides = _overrides(args)
        if args.command == "preset":
            run_preset(args.name, _output_dir(args), overrides)
            print(f"preset {args.name}: ok -> {_output_dir(args)}")
            return EXIT_OK
        path = args.config or _env("CONFIG")
        if path is None:
            raise ConfigError(f"{args.command} needs --config or {ENV_PREFIX}CONFIG")
        cfg = _apply_overrides(resolve_config(load_config(path), SUBCOMMAND_MODE[args.command]), overrides)
        out = _output_dir(args, cfg)
        manifest = execute(cfg, out, args.command)
        print(f"{args.command}: ok in {manifest['wall_time_s']:.3g} s -> {out}")
        return EXIT_OK
    except (ConfigError, PreconditionError, UnsupportedSectorError, SymmetryBrokenError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, IntegrationError, NumericalStateError, InvalidModelError, SuperspinError) as exc:
        print(f"numerical failure: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
