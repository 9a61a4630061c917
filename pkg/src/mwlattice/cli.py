"""Command-line interface: experiment subcommands and deterministic outputs.

Each subcommand resolves a configuration (defaults <- preset <- config
file <- flag overrides), validates it against the schema, computes one
experiment, and writes its artifacts into the output directory:

* ``config_resolved.yaml``  - the fully resolved configuration, echoed
  verbatim so every output is reproducible from its own directory;
* ``<subcommand>.csv``      - the primary data table (``--format json``
  switches the table container to JSON);
* ``<subcommand>_summary.json`` - derived scalars plus the resolved
  configuration (``thermometry`` emits ``thermometry.json`` instead);
* ``manifest.json``         - subcommand, config hash, code version,
  start/end timestamps, and sha256 checksums of every emitted file,
  written atomically at the very end.

Exit codes: 0 success; 2 configuration/schema violation; 3 numerical
failure; 4 the run finished but flagged its result invalid (walk hit
the chain edge, sweep points failed, cooling did not reach steady
state).  Nonzero exits print a machine-readable JSON error to stderr.

All numeric output is deterministic for a given (config, seed); the
worker count never changes results, only wall time.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from types import SimpleNamespace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import __version__
from .bands import (
    BlochBasisSpec,
    ConvergenceError,
    bound_state_count,
    diagonalize,
    localized_states,
    recommended_band_count,
)
from .config import (
    ConfigError,
    build_inhom,
    build_lattice,
    config_assign,
    field_tesla,
    initial_spin,
    resolve,
)
from .constants import H_PLANCK
from .cooling import CoolingParams, TruncationError, cool
from .coupling import franck_condon_matrix
from .dynamics import (
    Pulse,
    bloch_drive_hamiltonian,
    bloch_spectrum,
    deep_spectrum,
    double_well_hamiltonian,
    evolve,
    extract_rabi,
    pulse_for_area,
    quantum_walk,
    rabi_trace,
    ballistic_fit,
    spin_visibility,
    transfer_population,
)
from .ensembles import (
    ThermalEnsemble,
    ThermometryError,
    beat_thermometry,
    nbar_to_temperature,
    sideband_thermometry,
    thermal_populations,
)
from .lattice import SpinState, displacement, well_depth, well_minimum

_SPIN = {"s0": SpinState.S0, "s1": SpinState.S1}

SUBCOMMANDS = ("bandstructure", "transitions", "couplings", "rabi",
               "spectrum", "cool", "thermometry", "walk", "sweep")


# ---------------------------------------------------------------------------
# output containers and writers


@dataclass
class RunOutput:
    """Everything a runner produced, before any file is written."""

    tables: Dict[str, Tuple[List[str], List[list]]] = field(
        default_factory=dict)
    summary: dict = field(default_factory=dict)
    primary: Optional[str] = None      # name of the table written as CSV
    invalid: Optional[str] = None      # reason string -> exit code 4


def _fmt_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.12g" % float(value)
    return str(value)


def _csv_text(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = [",".join(columns)]
    lines.extend(",".join(_fmt_cell(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True,
                      default=_json_default) + "\n"


def _write_atomic(path: str, text: str) -> bytes:
    data = text.encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return data


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# shared physics plumbing


def _regime(config: dict, cfg) -> str:
    mode = config["solver"]["regime"]
    if mode != "auto":
        return mode
    er = cfg.params.recoil_energy
    depth = min(well_depth(cfg, SpinState.S0),
                well_depth(cfg, SpinState.S1)) / er
    return "deep" if depth >= 50.0 else "shallow"


def _band_count(config: dict, cfg, spin: SpinState) -> int:
    return config["solver"]["band_count"] or recommended_band_count(cfg, spin)


def _deep_pair(config: dict, cfg, min_bands: int = 0):
    """Localized states of both spins on one shared real-space grid."""
    solver = config["solver"]
    pair = []
    sols = []
    for spin in (SpinState.S0, SpinState.S1):
        nb = max(_band_count(config, cfg, spin), min_bands)
        basis = BlochBasisSpec.for_config(cfg, band_count=nb,
                                          q_points=solver["q_points"])
        sols.append(diagonalize(cfg, spin, basis, check_convergence=False))
    center = 0.5 * (well_minimum(cfg, SpinState.S0)
                    + well_minimum(cfg, SpinState.S1))
    for sol in sols:
        pair.append(localized_states(
            sol, points_per_period=solver["points_per_period"],
            periods=solver["periods"], grid_center=center).bound())
    if min(p.psi.shape[0] for p in pair) < min_bands:
        raise ConfigError(
            f"{min_bands} motional levels requested but only "
            f"{min(p.psi.shape[0] for p in pair)} are localized at this "
            "lattice depth")
    return pair[0], pair[1]


def _drive_pulse(config: dict, *, area_pi: Optional[float] = None,
                 coupling_abs: Optional[float] = None) -> Pulse:
    """Pulse from the drive block; optional calibrated area."""
    drive = config["drive"]
    shape = drive["shape"]
    duration = drive["duration_us"] * 1e-6
    fwhm = (drive["fwhm_us"] * 1e-6) or (duration / 3.0)
    detuning = drive["detuning_kHz"] * 1e3
    phase = drive["phase_rad"]
    if area_pi is not None:
        if coupling_abs is None or coupling_abs <= 0:
            raise ConfigError(
                "a pulse area was requested on a line with zero coupling")
        if shape == "gaussian":
            return pulse_for_area(area_pi, coupling_abs, fwhm,
                                  detuning=detuning, phase=phase)
        omega0 = area_pi / (2.0 * coupling_abs * duration)
        return Pulse(bare_rabi=omega0, duration=duration,
                     shape="rectangular", detuning=detuning, phase=phase)
    if shape == "gaussian":
        return Pulse.gaussian(drive["rabi_kHz"] * 1e3, fwhm,
                              detuning=detuning, phase=phase)
    return Pulse(bare_rabi=drive["rabi_kHz"] * 1e3, duration=duration,
                 shape="rectangular", detuning=detuning, phase=phase)


def _thermal_weights(nbar: float, n_levels: int,
                     initial_level: int) -> np.ndarray:
    if nbar <= 0:
        if initial_level >= n_levels:
            raise ConfigError(
                f"ensemble.initial_level={initial_level} exceeds the "
                f"{n_levels} motional levels available here")
        w = np.zeros(n_levels)
        w[initial_level] = 1.0
        return w
    p = thermal_populations(nbar)
    w = np.zeros(n_levels)
    w[: min(p.size, n_levels)] = p[:n_levels]
    return w / w.sum()


def _band_intervals(cfg, q_points: int = 16) -> Tuple[float, float]:
    """0 -> 1 band-center intervals (Hz) of each spin manifold."""
    basis = BlochBasisSpec.for_config(cfg, band_count=3, q_points=q_points)
    out = []
    for spin in (SpinState.S0, SpinState.S1):
        c = diagonalize(cfg, spin, basis,
                        check_convergence=False).band_centers()
        out.append(float(c[1] - c[0]) / H_PLANCK)
    return out[0], out[1]


# ---------------------------------------------------------------------------
# subcommand runners (pure compute; no file IO)


def _run_bandstructure(config: dict) -> RunOutput:
    cfg = build_lattice(config)
    solver = config["solver"]
    rows = []
    summary: dict = {"well_depth_Er": {}, "bound_states": {}}
    er = cfg.params.recoil_energy
    for label, spin in (("s0", SpinState.S0), ("s1", SpinState.S1)):
        basis = BlochBasisSpec.for_config(
            cfg, band_count=_band_count(config, cfg, spin),
            q_points=solver["q_points"])
        sol = diagonalize(cfg, spin, basis)
        for b in range(sol.energies.shape[1]):
            for iq, q in enumerate(sol.q_grid):
                rows.append([float(q), b, label,
                             float(sol.energies[iq, b] / er)])
        summary["well_depth_Er"][label] = well_depth(cfg, spin) / er
        summary["bound_states"][label] = int(bound_state_count(cfg, spin, sol))
    return RunOutput(
        tables={"bandstructure": (["q_over_k", "band", "spin", "energy_Er"],
                                  rows)},
        summary=summary, primary="bandstructure")


def _run_transitions(config: dict) -> RunOutput:
    cfg = build_lattice(config)
    solver = config["solver"]
    level_cap = config["transitions"]["max_level"]
    zshift = cfg.params.zeeman_slope * field_tesla(config)
    nb = max(level_cap + 2,
             _band_count(config, cfg, SpinState.S0),
             _band_count(config, cfg, SpinState.S1))
    basis = BlochBasisSpec.for_config(cfg, band_count=nb,
                                      q_points=solver["q_points"])
    sol0 = diagonalize(cfg, SpinState.S0, basis)
    sol1 = diagonalize(cfg, SpinState.S1, basis)
    rows = []
    for n in range(level_cap + 1):
        for nprime in range(level_cap + 1):
            diff = (sol1.energies[:, nprime] - sol0.energies[:, n]) / H_PLANCK
            rows.append([n, nprime,
                         float(diff.mean() + zshift),
                         float(diff.max() - diff.min())])
    nu0, nu1 = _band_intervals(cfg, solver["q_points"])
    summary = {"axial_interval_Hz": {"s0": nu0, "s1": nu1},
               "zeeman_shift_Hz": zshift}
    return RunOutput(
        tables={"transitions": (["n", "nprime", "center_Hz", "width_Hz"],
                                rows)},
        summary=summary, primary="transitions")


def _run_couplings(config: dict) -> RunOutput:
    cfg = build_lattice(config)
    level_cap = config["couplings"]["max_level"]
    bare_rabi = config["drive"]["rabi_kHz"] * 1e3
    loc0, loc1 = _deep_pair(config, cfg, min_bands=level_cap + 1)
    cm = franck_condon_matrix(loc0, loc1, bare_rabi=bare_rabi)
    dx_nm = displacement(cfg) * 1e9
    n1, n0 = cm.elements.shape
    rows = []
    for n in range(min(level_cap + 1, n0)):
        for nprime in range(min(level_cap + 1, n1)):
            m_abs = float(np.abs(cm.elements[nprime, n]))
            rows.append([n, nprime, m_abs, bare_rabi * m_abs, dx_nm])
    summary = {
        "delta_x_nm": dx_nm,
        "bare_rabi_Hz": bare_rabi,
        "well_depth_Er": {
            "s0": well_depth(cfg, SpinState.S0) / cfg.params.recoil_energy,
            "s1": well_depth(cfg, SpinState.S1) / cfg.params.recoil_energy},
    }
    return RunOutput(
        tables={"couplings": (["n", "nprime", "abs_M", "rabi_Hz",
                               "delta_x_nm"], rows)},
        summary=summary, primary="couplings")


def _rabi_hamiltonian(config: dict, cfg):
    """Drive Hamiltonian in the regime-appropriate basis."""
    reference_line = tuple(config["drive"]["reference"])
    if _regime(config, cfg) == "deep":
        loc0, loc1 = _deep_pair(config, cfg,
                                min_bands=max(reference_line) + 1)
        cm = franck_condon_matrix(loc0, loc1)
        return double_well_hamiltonian(loc0, loc1, cm,
                                       reference_line=reference_line)
    solver = config["solver"]
    nb = config["solver"]["band_count"] or 6
    basis = BlochBasisSpec.for_config(cfg, band_count=nb,
                                      q_points=solver["q_points"])
    sol0 = diagonalize(cfg, SpinState.S0, basis, check_convergence=False)
    sol1 = diagonalize(cfg, SpinState.S1, basis, check_convergence=False)
    return bloch_drive_hamiltonian(sol0, sol1, reference_line=reference_line)


def _run_rabi(config: dict) -> RunOutput:
    cfg = build_lattice(config)
    spin = initial_spin(config)
    ens = config["ensemble"]
    drive = config["drive"]
    ham = _rabi_hamiltonian(config, cfg)
    pulse = _drive_pulse(config)
    times = np.linspace(0.0, pulse.duration, drive["time_points"])

    n_init = ham.dims[0 if spin is SpinState.S0 else 1]
    weights = _thermal_weights(ens["nbar"], n_init, ens["initial_level"])
    transfer = np.zeros(times.size)
    resolvable = True
    for lvl, w in enumerate(weights):
        if w <= 0:
            continue
        trace = rabi_trace(ham, pulse, times, (spin, lvl))
        transfer += w * trace.transfer
        if lvl == int(np.argmax(weights)):
            resolvable = trace.resolvable

    # dressed-line prediction: bare Rabi times the driven line's overlap
    n_ref, nprime_ref = drive["reference"]
    m = np.abs(ham.coupling)
    if m.ndim > 2:
        m = m.mean(axis=tuple(range(m.ndim - 2)))
    predicted = pulse.bare_rabi * float(m[nprime_ref, n_ref])

    p_init = 1.0 - transfer
    p0 = p_init if spin is SpinState.S0 else transfer
    p1 = transfer if spin is SpinState.S0 else p_init
    rows = [[t * 1e6, float(a), float(b)]
            for t, a, b in zip(times, p0, p1)]
    measured = None
    try:
        measured = extract_rabi(times, transfer)
    except ValueError:
        pass
    summary = {
        "predicted_rabi_Hz": predicted,
        "measured_rabi_Hz": measured,
        "levels_resolvable": resolvable,
        "reference_line": list(drive["reference"]),
        "pulse_area_pi": pulse.area_pi,
    }
    return RunOutput(tables={"rabi": (["t_us", "P0", "P1"], rows)},
                     summary=summary, primary="rabi")


def _spectrum_coupling_abs(config: dict, cfg, line: Tuple[int, int],
                           regime: str) -> float:
    """|M| of one line, for pulse-area calibration."""
    n, nprime = line
    if regime == "deep":
        loc0, loc1 = _deep_pair(config, cfg, min_bands=max(line) + 1)
        cm = franck_condon_matrix(loc0, loc1)
        return float(np.abs(cm.elements[nprime, n]))
    solver = config["solver"]
    nb = max(config["solver"]["band_count"] or 6, max(line) + 1)
    basis = BlochBasisSpec.for_config(cfg, band_count=nb,
                                      q_points=solver["q_points"])
    sol0 = diagonalize(cfg, SpinState.S0, basis, check_convergence=False)
    sol1 = diagonalize(cfg, SpinState.S1, basis, check_convergence=False)
    ham = bloch_drive_hamiltonian(sol0, sol1)
    m = np.abs(ham.coupling)
    return float(m.mean(axis=0)[nprime, n])


def _line_offset(config: dict, cfg, line: Tuple[int, int],
                 ref_line: Tuple[int, int]) -> float:
    """Center of one microwave line relative to another, Hz."""
    if tuple(line) == tuple(ref_line):
        return 0.0
    nb = max(line + ref_line) + 1
    basis = BlochBasisSpec.for_config(cfg, band_count=nb,
                                      q_points=config["solver"]["q_points"])
    c0 = diagonalize(cfg, SpinState.S0, basis,
                     check_convergence=False).band_centers()
    c1 = diagonalize(cfg, SpinState.S1, basis,
                     check_convergence=False).band_centers()

    def center(pair):
        n, nprime = pair
        return (c1[nprime] - c0[n]) / H_PLANCK

    return center(line) - center(ref_line)


def _run_spectrum(config: dict) -> RunOutput:
    cfg = build_lattice(config)
    solver = config["solver"]
    scan = config["scan"]
    drive = config["drive"]
    spin = initial_spin(config)
    nbar = config["ensemble"]["nbar"]
    ensemble = ThermalEnsemble.from_nbar(nbar) if nbar > 0 else None
    inhom = build_inhom(config)
    regime = _regime(config, cfg)
    zshift = cfg.params.zeeman_slope * field_tesla(config)
    reference_line = tuple(drive["reference"])
    seed = config["seed"]

    windows = scan["windows"] or [{
        "start_kHz": scan["start_kHz"], "stop_kHz": scan["stop_kHz"],
        "points": scan["points"],
    }]

    rows = []
    window_meta = []
    for win in windows:
        detunings = np.linspace(win["start_kHz"] * 1e3,
                                win["stop_kHz"] * 1e3, win["points"])
        # Each window is referenced to the line it probes, and the axis is
        # translated back afterwards.  Depth-scaling inhomogeneity in
        # "shift" mode then displaces the correct line, so windows around
        # different lines keep their individual broadening.
        line = tuple(win.get("line", reference_line))
        offset = _line_offset(config, cfg, line, reference_line)
        area = win.get("area_pi")
        if area is not None:
            m_abs = _spectrum_coupling_abs(config, cfg, line, regime)
            pulse = _drive_pulse(config, area_pi=area, coupling_abs=m_abs)
        else:
            pulse = _drive_pulse(config)
        internal = detunings - zshift - offset
        if regime == "deep":
            result = deep_spectrum(
                cfg, pulse, internal, initial_spin=spin,
                ensemble=ensemble,
                band_count=solver["band_count"] or None,
                q_points=solver["q_points"],
                points_per_period=solver["points_per_period"],
                periods=solver["periods"], reference_line=line,
                inhom=inhom, inhom_mode=solver["inhom_mode"], seed=seed)
        else:
            result = bloch_spectrum(
                cfg, pulse, internal, initial_spin=spin,
                ensemble=ensemble,
                band_count=solver["band_count"] or 6,
                q_points=solver["q_points"], reference_line=line,
                inhom=inhom, inhom_mode=solver["inhom_mode"], seed=seed)
        rows.extend([d / 1e3, float(t)]
                    for d, t in zip(detunings, result.transfer))
        window_meta.append({
            "start_kHz": win["start_kHz"], "stop_kHz": win["stop_kHz"],
            "points": win["points"], "line": list(line),
            "line_offset_Hz": offset, "line_area_pi": area,
            "bare_area_pi": pulse.area_pi, "bare_rabi_Hz": pulse.bare_rabi,
            "mean_sample_std": (None if result.sample_std is None
                                else float(np.mean(result.sample_std))),
        })
    summary = {
        "regime": regime,
        "reference_Hz": float(result.reference) - offset,
        "zeeman_shift_Hz": zshift,
        "windows": window_meta,
    }
    return RunOutput(
        tables={"spectrum": (["detuning_kHz", "transfer"], rows)},
        summary=summary, primary="spectrum")


def _run_cool(config: dict) -> RunOutput:
    cfg = build_lattice(config)
    block = config["cool"]
    solver = config["solver"]
    params = CoolingParams(
        bare_rabi=block["rabi_kHz"] * 1e3,
        repump_rate=block["repump_rate_per_ms"] * 1e3,
        duration=block["duration_ms"] * 1e-3,
        n_levels=block["n_levels"],
        buffer_levels=block["buffer_levels"],
        repump_displaced=block["repump_displaced"],
        emission=block["emission"],
        absorption_projection=block["absorption_projection"],
        time_points=block["time_points"],
    )
    result = cool(cfg, block["initial_nbar"], params,
                  q_points=solver["q_points"],
                  points_per_period=solver["points_per_period"],
                  periods=solver["periods"])
    rows = [[t * 1e3, float(n), float(p)]
            for t, n, p in zip(result.times, result.nbar,
                               result.ground_population)]
    summary = {
        "final_nbar": result.final_nbar,
        "steady_nbar": result.steady_nbar,
        "heating_per_cycle": result.heating_per_cycle,
        "floor_estimate": result.floor_estimate,
        "contributions": result.contributions,
        "steady": result.steady,
        "converged": result.converged,
        "n_levels": list(result.n_levels),
    }
    invalid = None
    if not (result.steady or result.converged):
        # slow off-resonant drain from the buffer levels keeps the strict
        # rate criterion unmet long after the floor is reached, so only a
        # trajectory that ended far from the exact steady state (from the
        # generator null space) marks the run invalid
        ratio = result.final_nbar / max(result.steady_nbar, 1e-12)
        if not 0.5 <= ratio <= 1.5:
            invalid = (f"cooling ended at nbar {result.final_nbar:.4g}, "
                       f"far from the steady value "
                       f"{result.steady_nbar:.4g}; extend cool.duration_ms")
    return RunOutput(tables={"cool": (["t_ms", "nbar", "p0"], rows)},
                     summary=summary, primary="cool", invalid=invalid)


def _read_csv_columns(path: str, wanted: Sequence[str]) -> dict:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            lines = [ln for ln in fh.read().split("\n") if ln.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read thermometry input {path}: {exc}") \
            from exc
    if not lines:
        raise ConfigError(f"thermometry input {path} is empty")
    header = [h.strip() for h in lines[0].split(",")]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise ConfigError(
            f"thermometry input {path} lacks columns {missing}; "
            f"found {header}")
    idx = {c: header.index(c) for c in wanted}
    out = {c: [] for c in wanted}
    for ln in lines[1:]:
        parts = ln.split(",")
        for c in wanted:
            out[c].append(float(parts[idx[c]]))
    return {c: np.asarray(v) for c, v in out.items()}


def _run_thermometry(config: dict) -> RunOutput:
    block = config["thermometry"]
    path = block["input"]
    if not path:
        raise ConfigError("thermometry.input must point to a spectrum or "
                          "trace CSV from a previous run")
    cfg = build_lattice(config)
    spin = initial_spin(config)
    nu0, nu1 = _band_intervals(cfg, config["solver"]["q_points"])
    method = block["method"]

    if method == "sideband":
        data = _read_csv_columns(path, ["detuning_kHz", "transfer"])
        d = data["detuning_kHz"] * 1e3
        t = data["transfer"]
        half = block["window_kHz"] * 1e3
        if spin is SpinState.S1:
            red_center, blue_center = nu1, -nu0
        else:
            red_center, blue_center = -nu0, nu1
        areas = []
        for center in (red_center, blue_center):
            sel = np.abs(d - center) <= half
            if np.count_nonzero(sel) < 3:
                raise ThermometryError(
                    f"fewer than 3 spectrum points within {half / 1e3:.3g} "
                    f"kHz of the sideband at {center / 1e3:.3g} kHz")
            areas.append(float(np.trapezoid(t[sel], d[sel])))
        res = sideband_thermometry(areas[0], areas[1])
        nu_init = nu1 if spin is SpinState.S1 else nu0
        report = {
            "nbar": res.nbar,
            "p0": res.ground_population,
            "T_uK": nbar_to_temperature(res.nbar, nu_init) * 1e6,
            "method": "sideband",
            "residual": 0.0,
        }
    else:
        data = _read_csv_columns(path, ["t_us", "P0", "P1"])
        times = data["t_us"] * 1e-6
        transfer = data["P0"] if spin is SpinState.S1 else data["P1"]
        trace = SimpleNamespace(times=times, transfer=transfer)
        loc0, loc1 = _deep_pair(config, cfg)
        cm = franck_condon_matrix(loc0, loc1,
                                  bare_rabi=config["drive"]["rabi_kHz"] * 1e3)
        nu_init = nu1 if spin is SpinState.S1 else nu0
        res = beat_thermometry(trace, cm, axial_frequency=nu_init,
                               fit_levels=block["fit_levels"] or None)
        report = {
            "nbar": res.nbar,
            "p0": float(res.populations[0]),
            "T_uK": float(res.temperature * 1e6),
            "method": "beat",
            "residual": res.residual,
        }
    return RunOutput(summary=report)


def _run_walk(config: dict) -> RunOutput:
    cfg = build_lattice(config)
    block = config["walk"]
    solver = config["solver"]
    times = np.linspace(0.0, block["duration_ms"] * 1e-3,
                        block["time_points"])
    result = quantum_walk(
        cfg, block["rabi_kHz"] * 1e3, block["sites"], times,
        q_points=solver["q_points"],
        points_per_period=solver["points_per_period"],
        periods=solver["periods"])
    rows = [[t * 1e6, x * 1e6, s * 1e6, float(p)]
            for t, x, s, p in zip(result.times, result.mean_x,
                                  result.sigma_x, result.p_spin0)]
    exponent, speed = ballistic_fit(result.times, result.sigma_x)
    centers, vis = spin_visibility(result.times, result.p_spin0,
                                   result.rabi_period)
    summary = {
        "exponent": exponent,
        "speed_um_per_ms": speed * 1e3,
        "hop_right_Hz": float(np.abs(result.hop_right)),
        "hop_left_Hz": float(np.abs(result.hop_left)),
        "rabi_period_ms": result.rabi_period * 1e3,
        "visibility_t_ms": [c * 1e3 for c in centers],
        "visibility": [float(v) for v in vis],
        "edge_max": result.edge_max,
        "valid": result.valid,
        "n_sites": result.n_sites,
    }
    invalid = None
    if not result.valid:
        invalid = ("walk population reached the chain edge; increase "
                   "walk.sites or shorten walk.duration_ms")
    return RunOutput(
        tables={"walk": (["t_us", "mean_x_um", "sigma_x_um", "P0"], rows)},
        summary=summary, primary="walk", invalid=invalid)


# ---------------------------------------------------------------------------
# sweep


_RUNNERS = {
    "bandstructure": _run_bandstructure,
    "transitions": _run_transitions,
    "couplings": _run_couplings,
    "rabi": _run_rabi,
    "spectrum": _run_spectrum,
    "cool": _run_cool,
    "thermometry": _run_thermometry,
    "walk": _run_walk,
}


def _sweep_point(payload):
    """One grid point; must stay importable for process pools."""
    index, value, config, subcommand = payload
    try:
        out = _RUNNERS[subcommand](config)
        cols, rows = out.tables[out.primary]
        status = "ok" if out.invalid is None else "invalid"
        return index, status, cols, rows
    except Exception as exc:  # noqa: BLE001 - failed points are data
        return index, f"error: {type(exc).__name__}: {exc}", None, None


def _run_sweep(config: dict, workers: int) -> RunOutput:
    block = config["sweep"]
    inner = block["subcommand"]
    steps = block["steps"]
    grid = (np.array([block["start"]]) if steps == 1
            else np.linspace(block["start"], block["stop"], steps))

    payloads = []
    for i, value in enumerate(grid):
        point = copy.deepcopy(config)
        config_assign(point, block["parameter"], float(value))
        payloads.append((i, float(value), point, inner))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, steps)) as pool:
            results = list(pool.map(_sweep_point, payloads))
    else:
        results = [_sweep_point(p) for p in payloads]
    results.sort(key=lambda r: r[0])

    inner_cols: List[str] = []
    for _, status, cols, _ in results:
        if cols is not None:
            inner_cols = cols
            break
    columns = ["index", "value", "status"] + inner_cols
    rows = []
    failed = []
    for index, status, cols, inner_rows in results:
        value = float(grid[index])
        if inner_rows is None:
            rows.append([index, value, status] + [""] * len(inner_cols))
            failed.append(index)
            continue
        if status != "ok":
            failed.append(index)
        for r in inner_rows:
            rows.append([index, value, status] + list(r))
    summary = {
        "parameter": block["parameter"],
        "subcommand": inner,
        "values": [float(v) for v in grid],
        "failed_points": failed,
    }
    invalid = None
    if failed:
        invalid = (f"{len(failed)} of {steps} sweep points failed: "
                   f"indices {failed}")
    return RunOutput(tables={"sweep": (columns, rows)},
                     summary=summary, primary="sweep", invalid=invalid)


# ---------------------------------------------------------------------------
# orchestration


def _emit(outdir: str, subcommand: str, config: dict, out: RunOutput,
          fmt: str, started: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    files: Dict[str, bytes] = {}

    text = yaml.safe_dump(config, sort_keys=True, default_flow_style=False)
    files["config_resolved.yaml"] = _write_atomic(
        os.path.join(outdir, "config_resolved.yaml"), text)

    if out.primary is not None:
        cols, rows = out.tables[out.primary]
        if fmt == "json":
            name = f"{subcommand}.json"
            body = _json_text({"columns": cols, "rows": rows})
        else:
            name = f"{subcommand}.csv"
            body = _csv_text(cols, rows)
        files[name] = _write_atomic(os.path.join(outdir, name), body)

    if subcommand == "thermometry":
        name = "thermometry.json"
        body = _json_text(out.summary)
    else:
        name = f"{subcommand}_summary.json"
        body = _json_text({"config": config, **out.summary})
    files[name] = _write_atomic(os.path.join(outdir, name), body)

    manifest = {
        "subcommand": subcommand,
        "config_sha256": _config_hash(config),
        "code_version": __version__,
        "started_utc": started,
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "files": {n: hashlib.sha256(b).hexdigest()
                  for n, b in sorted(files.items())},
    }
    _write_atomic(os.path.join(outdir, "manifest.json"),
                  _json_text(manifest))


def _error_json(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc),
               "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwlattice",
        description=("Microwave-driven atomic motion in state-dependent "
                     "optical lattices: band structure, displaced-well "
                     "couplings, spin-motion dynamics, cooling, thermometry "
                     "and transport."),
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--preset",
                       help="named preset (fig2b, fig3a, fig4, fig5b, walk)")
        p.add_argument("--out", help="output directory "
                       "(default: output.dir from the config)")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes for sweeps (results are "
                       "identical for any worker count)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="primary table format (default csv)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    started = datetime.now(timezone.utc).isoformat()
    try:
        overrides: dict = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        config = resolve(args.config, args.preset, overrides)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")

        if args.subcommand == "sweep":
            out = _run_sweep(config, args.workers)
        else:
            out = _RUNNERS[args.subcommand](config)

        # --out only redirects the artifacts; it is not part of the
        # configuration, so reruns into different directories stay
        # bit-identical.
        _emit(args.out or config["output"]["dir"], args.subcommand, config,
              out, args.format, started)
        if out.invalid is not None:
            return _error_json(4, RuntimeError(out.invalid))
        return 0
    except ConfigError as exc:
        return _error_json(2, exc)
    except ThermometryError as exc:
        return _error_json(3, exc)
    except (ConvergenceError, TruncationError, FloatingPointError,
            np.linalg.LinAlgError, RuntimeError) as exc:
        return _error_json(3, exc)
    except ValueError as exc:
        return _error_json(2, exc)


if __name__ == "__main__":
    raise SystemExit(main())
