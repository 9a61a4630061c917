"""Configuration tree: defaults, schema validation, unit conversion.

The configuration is a single YAML document.  Every key is validated
against a JSON schema with unknown keys rejected at every level, so a
typo fails loudly before any computation.  All leaf units are explicit
in the key names (``_nm``, ``_kHz``, ``_us`` ...); builder helpers
convert the validated tree into the physics-layer objects, which work
in SI units throughout.
"""

from __future__ import annotations

import copy
import math
from importlib import resources
from typing import Any, Mapping, Optional

import jsonschema
import yaml

from .constants import CS_MASS
from .lattice import LatticeConfig, PhysicalParams, SpinState
from .ensembles import InhomogeneityModel

PRESET_NAMES = ("fig2b", "fig3a", "fig4", "fig5b", "walk")


class ConfigError(ValueError):
    """Configuration failed validation (schema, units, or file problems)."""


# ---------------------------------------------------------------------------
# defaults


DEFAULTS: dict = {
    "lattice": {
        "wavelength_nm": 865.9,
        # polarization angle giving the standard 24 nm well displacement
        "theta_rad": 0.23115676469889823,
        "depth_plus_Er": 832.6,
        "depth_ratio": 1.0,
        "weights": {"s0": [0.25, 0.75], "s1": [1.0, 0.0]},
        "sign": -1,
    },
    "field": {"B_gauss": 0.0},
    "ensemble": {
        "nbar": 0.0,
        "initial_spin": "s1",
        "initial_level": 0,
    },
    "inhom": {
        "sigma_U_frac": 0.0,
        "sigma_B_gauss": 0.0,
        "radial": {
            "T_uK": 0.0,
            "omega_kHz": 0.0,
            "waist_um": 0.0,
            "samples": 64,
        },
    },
    "solver": {
        "regime": "auto",          # auto | deep | shallow
        "q_points": 16,
        "band_count": 0,           # 0 = automatic per depth
        "points_per_period": 128,
        "periods": 12,
        "inhom_mode": "shift",     # shift | rebuild
    },
    "drive": {
        "rabi_kHz": 60.0,
        "detuning_kHz": 0.0,
        "shape": "rectangular",    # rectangular | gaussian
        "duration_us": 200.0,
        "fwhm_us": 0.0,            # gaussian only; 0 = duration/3
        "phase_rad": 0.0,
        "reference": [0, 0],       # line (n, nprime) at detuning zero
        "time_points": 501,
    },
    "scan": {
        "start_kHz": -140.0,
        "stop_kHz": 140.0,
        "points": 281,
        "windows": [],             # optional per-window scan segments
    },
    "couplings": {"max_level": 3},
    "transitions": {"max_level": 3},
    "cool": {
        "rabi_kHz": 60.0,
        "repump_rate_per_ms": 200.0,
        "duration_ms": 20.0,
        "n_levels": 8,
        "buffer_levels": 6,
        "time_points": 121,
        "repump_displaced": False,
        "emission": "dipole",      # dipole | none
        "absorption_projection": 1.0,
        "initial_nbar": 0.8,
    },
    "walk": {
        "rabi_kHz": 10.0,
        "sites": 88,
        "duration_ms": 6.0,
        "time_points": 301,
    },
    "thermometry": {
        "method": "sideband",      # sideband | beat
        "input": "",               # CSV path; empty = spectrum.csv/rabi.csv in --out
        "window_kHz": 10.0,        # area window half-width around each sideband
        "fit_levels": 0,           # beat: tone count; 0 = automatic
    },
    "sweep": {
        "parameter": "lattice.theta_rad",
        "start": 0.0,
        "stop": 1.5707963267948966,
        "steps": 50,
        "subcommand": "couplings",
    },
    "output": {"dir": "mwlattice_out"},
    "seed": 0,
}


# ---------------------------------------------------------------------------
# schema


def _num(minimum=None, maximum=None, exclusive_min=None) -> dict:
    s: dict = {"type": "number"}
    if minimum is not None:
        s["minimum"] = minimum
    if maximum is not None:
        s["maximum"] = maximum
    if exclusive_min is not None:
        s["exclusiveMinimum"] = exclusive_min
    return s


def _int(minimum=None, maximum=None) -> dict:
    s: dict = {"type": "integer"}
    if minimum is not None:
        s["minimum"] = minimum
    if maximum is not None:
        s["maximum"] = maximum
    return s


def _obj(props: dict, required=()) -> dict:
    return {
        "type": "object",
        "properties": props,
        "additionalProperties": False,
        **({"required": list(required)} if required else {}),
    }


_WEIGHT_PAIR = {
    "type": "array",
    "items": _num(minimum=0.0),
    "minItems": 2,
    "maxItems": 2,
}

_WINDOW = _obj({
    "start_kHz": _num(),
    "stop_kHz": _num(),
    "points": _int(minimum=2),
    "area_pi": _num(exclusive_min=0.0),
    "line": {"type": "array", "items": _int(minimum=0),
             "minItems": 2, "maxItems": 2},
}, required=("start_kHz", "stop_kHz", "points"))

SCHEMA = _obj({
    "lattice": _obj({
        "wavelength_nm": _num(exclusive_min=0.0),
        "theta_rad": _num(minimum=0.0, maximum=math.pi / 2 + 1e-12),
        "depth_plus_Er": _num(exclusive_min=0.0),
        "depth_ratio": _num(exclusive_min=0.0),
        "weights": _obj({"s0": _WEIGHT_PAIR, "s1": _WEIGHT_PAIR}),
        "sign": {"enum": [-1, 1]},
    }),
    "field": _obj({"B_gauss": _num()}),
    "ensemble": _obj({
        "nbar": _num(minimum=0.0),
        "initial_spin": {"enum": ["s0", "s1"]},
        "initial_level": _int(minimum=0),
    }),
    "inhom": _obj({
        "sigma_U_frac": _num(minimum=0.0),
        "sigma_B_gauss": _num(minimum=0.0),
        "radial": _obj({
            "T_uK": _num(minimum=0.0),
            "omega_kHz": _num(minimum=0.0),
            "waist_um": _num(minimum=0.0),
            "samples": _int(minimum=1),
        }),
    }),
    "solver": _obj({
        "regime": {"enum": ["auto", "deep", "shallow"]},
        "q_points": _int(minimum=2),
        "band_count": _int(minimum=0),
        "points_per_period": _int(minimum=16),
        "periods": _int(minimum=2),
        "inhom_mode": {"enum": ["shift", "rebuild"]},
    }),
    "drive": _obj({
        "rabi_kHz": _num(minimum=0.0),
        "detuning_kHz": _num(),
        "shape": {"enum": ["rectangular", "gaussian"]},
        "duration_us": _num(exclusive_min=0.0),
        "fwhm_us": _num(minimum=0.0),
        "phase_rad": _num(),
        "reference": {"type": "array", "items": _int(minimum=0),
                      "minItems": 2, "maxItems": 2},
        "time_points": _int(minimum=8),
    }),
    "scan": _obj({
        "start_kHz": _num(),
        "stop_kHz": _num(),
        "points": _int(minimum=2),
        "windows": {"type": "array", "items": _WINDOW},
    }),
    "couplings": _obj({"max_level": _int(minimum=0)}),
    "transitions": _obj({"max_level": _int(minimum=0)}),
    "cool": _obj({
        "rabi_kHz": _num(minimum=0.0),
        "repump_rate_per_ms": _num(exclusive_min=0.0),
        "duration_ms": _num(exclusive_min=0.0),
        "n_levels": _int(minimum=2),
        "buffer_levels": _int(minimum=0),
        "time_points": _int(minimum=2),
        "repump_displaced": {"type": "boolean"},
        "emission": {"enum": ["dipole", "none"]},
        "absorption_projection": _num(minimum=0.0, maximum=1.0),
        "initial_nbar": _num(minimum=0.0),
    }),
    "walk": _obj({
        "rabi_kHz": _num(exclusive_min=0.0),
        "sites": _int(minimum=4),
        "duration_ms": _num(exclusive_min=0.0),
        "time_points": _int(minimum=8),
    }),
    "thermometry": _obj({
        "method": {"enum": ["sideband", "beat"]},
        "input": {"type": "string"},
        "window_kHz": _num(exclusive_min=0.0),
        "fit_levels": _int(minimum=0),
    }),
    "sweep": _obj({
        "parameter": {"type": "string", "minLength": 1},
        "start": _num(),
        "stop": _num(),
        "steps": _int(minimum=1),
        "subcommand": {"enum": ["bandstructure", "transitions", "couplings",
                                "rabi", "spectrum", "cool", "walk"]},
    }),
    "output": _obj({"dir": {"type": "string", "minLength": 1}}),
    "seed": _int(minimum=0),
})


# ---------------------------------------------------------------------------
# loading / merging / validation


def deep_merge(base: Mapping, override: Mapping) -> dict:
    """Recursive dict merge; scalars and lists in override win."""
    out = dict(copy.deepcopy(base))
    for key, val in override.items():
        if isinstance(val, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_yaml(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be a mapping, got "
                          f"{type(doc).__name__}")
    return doc


def load_preset(name: str) -> dict:
    if name not in PRESET_NAMES:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    text = (resources.files("mwlattice") / "presets" / f"{name}.yaml"
            ).read_text(encoding="utf-8")
    doc = yaml.safe_load(text)
    return doc or {}


def validate(config: Mapping) -> None:
    """Validate against the schema; raise ConfigError on any violation."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(config),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config key {path}: {e.message}")


def resolve(config_path: Optional[str] = None,
            preset: Optional[str] = None,
            overrides: Optional[Mapping] = None) -> dict:
    """Defaults <- preset <- config file <- overrides, then validate."""
    cfg = copy.deepcopy(DEFAULTS)
    if preset:
        cfg = deep_merge(cfg, load_preset(preset))
    if config_path:
        cfg = deep_merge(cfg, load_yaml(config_path))
    if overrides:
        cfg = deep_merge(cfg, overrides)
    validate(cfg)
    return cfg


def config_lookup(config: Mapping, dotted: str) -> Any:
    """Fetch a leaf by dotted path; ConfigError when missing."""
    node: Any = config
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            raise ConfigError(f"sweep parameter {dotted!r} does not resolve "
                              "to a config key")
        node = node[part]
    return node


def config_assign(config: dict, dotted: str, value: Any) -> None:
    """Set a numeric leaf by dotted path (sweep support)."""
    old = config_lookup(config, dotted)
    if not isinstance(old, (int, float)) or isinstance(old, bool):
        raise ConfigError(f"sweep parameter {dotted!r} is not a numeric leaf")
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = float(value)


# ---------------------------------------------------------------------------
# builders: validated tree -> physics objects (SI units)


def build_params(config: Mapping) -> PhysicalParams:
    lat = config["lattice"]
    return PhysicalParams(wavelength=lat["wavelength_nm"] * 1e-9,
                          atom_mass=CS_MASS)


def build_lattice(config: Mapping) -> LatticeConfig:
    lat = config["lattice"]
    params = build_params(config)
    weights = {SpinState.S0: tuple(lat["weights"]["s0"]),
               SpinState.S1: tuple(lat["weights"]["s1"])}
    try:
        return LatticeConfig(
            params=params,
            theta=float(lat["theta_rad"]),
            depth_plus=lat["depth_plus_Er"] * params.recoil_energy,
            depth_ratio=float(lat["depth_ratio"]),
            weights=weights,
            attractive=(lat["sign"] < 0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def field_tesla(config: Mapping) -> float:
    return config["field"]["B_gauss"] * 1e-4


def build_inhom(config: Mapping) -> Optional[InhomogeneityModel]:
    inh = config["inhom"]
    rad = inh["radial"]
    try:
        model = InhomogeneityModel(
            sigma_depth_frac=float(inh["sigma_U_frac"]),
            sigma_field=inh["sigma_B_gauss"] * 1e-4,
            radial_temperature=rad["T_uK"] * 1e-6,
            radial_frequency=rad["omega_kHz"] * 1e3,
            beam_waist=rad["waist_um"] * 1e-6,
            samples=int(rad["samples"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return None if model.is_trivial else model


def initial_spin(config: Mapping) -> SpinState:
    return SpinState.S0 if config["ensemble"]["initial_spin"] == "s0" \
        else SpinState.S1
