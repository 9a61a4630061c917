"""State-dependent optical lattice geometry.

Two counterpropagating linearly polarized beams with an angle theta between
the polarization axes decompose into a sigma+ and a sigma- standing wave
whose nodes are displaced by theta/k.  A hyperfine state s feels the two
circular components with weights (w+, w-), so its potential is

    U_s(z) = sign * U_plus * kappa_s * [w+ cos^2(kz - theta/2)
                                        + w- cos^2(kz + theta/2)]

with kappa_s the depth ratio between the two spin manifolds
(kappa_S1 = depth_ratio, kappa_S0 = 1) and sign = -1 for an attractive
(red-detuned) lattice.  Rotating theta moves the potential minima of the
two spin states apart by a separation Delta x that is tunable between 0
and half a lattice period.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .constants import (
    CS_GROUND_HYPERFINE_HZ,
    CS_MASS,
    DEFAULT_WAVELENGTH,
    H_PLANCK,
    HBAR,
    K_B,
    TWO_PI,
    ZEEMAN_SLOPE_HZ_PER_T,
)


class DegenerateWellError(ValueError):
    """Raised when the requested weights leave a spin state untrapped."""


class FieldRangeError(ValueError):
    """Raised when a magnetic field is outside the linear Zeeman window."""


class SpinState(enum.IntEnum):
    """The two lattice-relevant hyperfine states.

    S0 is |F=3, mF=3> and S1 is |F=4, mF=4>; the integer values fix the
    storage order of all per-spin arrays.
    """

    S0 = 0
    S1 = 1


# sigma+/sigma- weights; S1 couples to a single circular component at the
# default wavelength, S0 sees the 1/4 : 3/4 line-strength split
DEFAULT_WEIGHTS: Mapping[SpinState, Tuple[float, float]] = {
    SpinState.S0: (0.25, 0.75),
    SpinState.S1: (1.0, 0.0),
}

# weights of two ideal, fully displaced circular standing waves
PURE_SIGMA_WEIGHTS: Mapping[SpinState, Tuple[float, float]] = {
    SpinState.S0: (0.0, 1.0),
    SpinState.S1: (1.0, 0.0),
}


@dataclass(frozen=True)
class PhysicalParams:
    """Atom and lattice-light properties; derived scales are computed."""

    atom_mass: float = CS_MASS                     # kg
    wavelength: float = DEFAULT_WAVELENGTH         # m
    hyperfine_splitting: float = CS_GROUND_HYPERFINE_HZ  # Hz
    zeeman_slope: float = ZEEMAN_SLOPE_HZ_PER_T    # Hz / T

    def __post_init__(self):
        if self.atom_mass <= 0 or self.wavelength <= 0:
            raise ValueError("atom mass and wavelength must be positive")
        if self.hyperfine_splitting <= 0:
            raise ValueError("hyperfine splitting must be positive")

    @property
    def wavenumber(self) -> float:
        return TWO_PI / self.wavelength

    @property
    def lattice_spacing(self) -> float:
        return self.wavelength / 2.0

    @property
    def recoil_energy(self) -> float:
        """E_R = (hbar k)^2 / 2m, in joules."""
        return (HBAR * self.wavenumber) ** 2 / (2.0 * self.atom_mass)


@dataclass(frozen=True)
class TrapSpec:
    """Harmonic view of one lattice site plus the radial beam profile."""

    axial_frequency: float    # Hz
    radial_frequency: float   # Hz
    beam_waist: float         # m
    depth: float              # J

    def __post_init__(self):
        for name in ("axial_frequency", "radial_frequency", "beam_waist", "depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _normalized_pair(pair: Tuple[float, float]) -> Tuple[float, float]:
    wp, wm = float(pair[0]), float(pair[1])
    if wp < 0 or wm < 0:
        raise ValueError("circular weights must be nonnegative")
    total = wp + wm
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"weight pair must sum to 1, got {total!r}")
    return wp / total, wm / total


@dataclass(frozen=True)
class LatticeConfig:
    """Full lattice description for both spin states."""

    params: PhysicalParams = field(default_factory=PhysicalParams)
    theta: float = 0.0            # polarization angle, rad, in [0, pi/2]
    depth_plus: float = 0.0       # sigma+ standing-wave depth U_plus, J
    depth_ratio: float = 1.0      # kappa = depth(S1) / depth(S0) scale
    weights: Mapping[SpinState, Tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_WEIGHTS))
    attractive: bool = True

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi / 2 + 1e-12:
            raise ValueError("theta must lie in [0, pi/2]")
        if self.depth_plus <= 0:
            raise ValueError("depth_plus must be positive")
        if self.depth_ratio <= 0:
            raise ValueError("depth_ratio must be positive")
        norm = {s: _normalized_pair(self.weights[s]) for s in SpinState}
        object.__setattr__(self, "weights", norm)

    @property
    def sign(self) -> float:
        return -1.0 if self.attractive else 1.0

    def kappa(self, spin: SpinState) -> float:
        return self.depth_ratio if spin is SpinState.S1 else 1.0

    @property
    def depth_plus_recoils(self) -> float:
        return self.depth_plus / self.params.recoil_energy

    def modulation(self, spin: SpinState) -> complex:
        """Complex amplitude of the e^{2ikz} Fourier component.

        The potential is sign*U*kappa*(1/2 + Re[m e^{2ikz}]) with
        m = (w+ e^{-i theta} + w- e^{i theta}) / 2; |m| <= 1/2 measures the
        residual standing-wave contrast for this spin state.
        """
        wp, wm = self.weights[spin]
        return 0.5 * (wp * np.exp(-1j * self.theta) + wm * np.exp(1j * self.theta))


def state_potential(z, spin: SpinState, cfg: LatticeConfig) -> np.ndarray:
    """Lattice potential (J) for one spin state, vectorized over z (m)."""
    k = cfg.params.wavenumber
    wp, wm = cfg.weights[spin]
    scale = cfg.sign * cfg.depth_plus * cfg.kappa(spin)
    z = np.asarray(z, dtype=float)
    return scale * (wp * np.cos(k * z - cfg.theta / 2) ** 2
                    + wm * np.cos(k * z + cfg.theta / 2) ** 2)


def potential_fourier(cfg: LatticeConfig, spin: SpinState) -> Tuple[float, complex]:
    """(V0, V1) with U_s(z) = V0 + V1 e^{2ikz} + conj(V1) e^{-2ikz}."""
    scale = cfg.sign * cfg.depth_plus * cfg.kappa(spin)
    return 0.5 * scale, scale * cfg.modulation(spin) / 2.0


def well_depth(cfg: LatticeConfig, spin: SpinState) -> float:
    """Peak-to-valley modulation depth (J) seen by one spin state."""
    return cfg.depth_plus * cfg.kappa(spin) * 2.0 * abs(cfg.modulation(spin))


def well_minimum(cfg: LatticeConfig, spin: SpinState,
                 curvature_floor: float = 1e-6) -> float:
    """Position (m) of the potential minimum nearest z = 0.

    Located by a dense scan over one period followed by bounded local
    refinement.  Raises DegenerateWellError when the residual modulation
    is too flat to define a well.
    """
    a = cfg.params.lattice_spacing
    k = cfg.params.wavenumber
    grid = np.linspace(-a / 2, a / 2, 2048, endpoint=False)
    vals = state_potential(grid, spin, cfg)
    i0 = int(np.argmin(vals))
    dz = grid[1] - grid[0]
    lo, hi = grid[i0] - 2 * dz, grid[i0] + 2 * dz
    res = minimize_scalar(lambda z: float(state_potential(z, spin, cfg)),
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-6 * a})
    zmin = float(res.x)

    # curvature check against a flat (degenerate) potential
    h = 1e-4 * a
    curv = (float(state_potential(zmin + h, spin, cfg))
            - 2 * float(state_potential(zmin, spin, cfg))
            + float(state_potential(zmin - h, spin, cfg))) / h ** 2
    floor = curvature_floor * cfg.depth_plus * cfg.kappa(spin) * k ** 2
    if curv < floor:
        raise DegenerateWellError(
            f"spin {spin.name}: well curvature {curv:.3e} below floor; "
            "weights leave this state effectively untrapped")
    # fold into [-a/2, a/2)
    return (zmin + a / 2) % a - a / 2


def displacement(cfg: LatticeConfig, curvature_floor: float = 1e-6) -> float:
    """Signed separation Delta x (m) between the nearest pair of minima.

    Positive when the S1 well sits at larger z than the S0 well; the
    value is folded into (-a/2, a/2] with the half-spacing point mapped
    to +a/2.  Antisymmetric under swapping the two spin states' weights.
    """
    z1 = well_minimum(cfg, SpinState.S1, curvature_floor)
    z0 = well_minimum(cfg, SpinState.S0, curvature_floor)
    a = cfg.params.lattice_spacing
    d = z1 - z0
    d = (d + a / 2) % a - a / 2
    if d < -a / 2 + 1e-12 * a:   # boundary belongs to +a/2
        d = a / 2
    return d


def theta_for_displacement(cfg: LatticeConfig, target: float,
                           tol: float = 1e-6) -> float:
    """Polarization angle at which displacement(cfg) equals target (m).

    Uses the monotonicity of Delta x(theta); target must lie between 0
    and the value reached at theta = pi/2.
    """
    import dataclasses

    def dx(theta: float) -> float:
        return displacement(dataclasses.replace(cfg, theta=theta))

    dmax = dx(math.pi / 2)
    if not 0.0 <= target <= dmax + 1e-15:
        raise ValueError(f"target displacement {target!r} outside [0, {dmax!r}]")
    if target < 1e-15:
        return 0.0
    return float(brentq(lambda t: dx(t) - target, 1e-9, math.pi / 2,
                        xtol=tol, rtol=1e-12))


def depth_to_frequency(depth: float, params: PhysicalParams) -> float:
    """Harmonic axial frequency (Hz) of a lattice well of given depth (J).

    nu = 2 sqrt(U / E_R) * E_R / h, from the curvature of U cos^2(kz).
    """
    if depth <= 0:
        raise ValueError("depth must be positive")
    er = params.recoil_energy
    return 2.0 * math.sqrt(depth / er) * er / H_PLANCK


def frequency_to_depth(nu: float, params: PhysicalParams) -> float:
    """Inverse of depth_to_frequency; nu in Hz, result in J."""
    if nu <= 0:
        raise ValueError("frequency must be positive")
    er = params.recoil_energy
    return (H_PLANCK * nu / (2.0 * er)) ** 2 * er


def zeeman_shift(b_field: float, params: PhysicalParams,
                 max_field: float = 1e-3) -> float:
    """Linear shift (Hz) of the S0 -> S1 transition at field B (tesla).

    Valid in the low-field window where the quadratic Breit-Rabi terms
    are negligible; fields beyond max_field raise FieldRangeError.
    """
    if abs(b_field) > max_field:
        raise FieldRangeError(
            f"|B| = {abs(b_field):.3e} T outside linear window {max_field:.1e} T")
    return params.zeeman_slope * b_field


# unit helpers; round trips are exact to floating point

def energy_to_frequency(e: float) -> float:
    return e / H_PLANCK


def frequency_to_energy(nu: float) -> float:
    return nu * H_PLANCK


def energy_to_temperature(e: float) -> float:
    return e / K_B


def temperature_to_energy(t: float) -> float:
    return t * K_B


def recoils_to_joules(u_er: float, params: PhysicalParams) -> float:
    return u_er * params.recoil_energy


def joules_to_recoils(e: float, params: PhysicalParams) -> float:
    return e / params.recoil_energy
