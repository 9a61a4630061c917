"""Bloch bands and localized well states of the spin-dependent lattice.

The single-particle Hamiltonian for one spin state is diagonalized in a
plane-wave basis e^{i(q + 2j k) z}: the kinetic term is diagonal and the
cos^2 potential couples plane waves differing by one reciprocal vector
2k, giving a complex Hermitian tridiagonal matrix per quasimomentum.
Band energies, Bloch coefficients and phase-fixed Wannier-style states
built from them feed the microwave coupling and dynamics layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .constants import H_PLANCK, HBAR
from .lattice import (
    LatticeConfig,
    SpinState,
    depth_to_frequency,
    potential_fourier,
    state_potential,
    well_depth,
    well_minimum,
)


class ConvergenceError(RuntimeError):
    """Raised when doubling the plane-wave cutoff still moves energies."""


def default_cutoff(depth_recoils: float) -> int:
    """Plane waves per side needed for deep lattices, with a floor of 32."""
    return max(32, math.ceil(3.0 * math.sqrt(max(depth_recoils, 0.0))))


@dataclass(frozen=True)
class BlochBasisSpec:
    """Plane-wave basis and quasimomentum grid for the band solver."""

    plane_wave_cutoff: int      # reciprocal vectors per side
    q_points: int = 32          # even; grid symmetric about q = 0
    band_count: int = 8

    def __post_init__(self):
        if self.band_count < 1:
            raise ValueError("band_count must be >= 1")
        if self.plane_wave_cutoff < self.band_count + 4:
            raise ValueError("cutoff must exceed band_count + 4")
        if self.q_points < 2 or self.q_points % 2:
            raise ValueError("q_points must be even and >= 2")

    @classmethod
    def for_config(cls, cfg: LatticeConfig, band_count: int = 8,
                   q_points: int = 32) -> "BlochBasisSpec":
        return cls(default_cutoff(cfg.depth_plus_recoils),
                   q_points=q_points, band_count=band_count)

    @property
    def q_grid(self) -> np.ndarray:
        """Midpoint grid in (-1, 1), units of k, symmetric about 0."""
        n = self.q_points
        return -1.0 + (2.0 * np.arange(n) + 1.0) / n

    @property
    def size(self) -> int:
        return 2 * self.plane_wave_cutoff + 1


@dataclass(frozen=True)
class EigenSolution:
    """Band energies and Bloch coefficients for one spin state."""

    cfg: LatticeConfig
    spin: SpinState
    basis: BlochBasisSpec
    q_grid: np.ndarray          # (nq,), units of k
    energies: np.ndarray        # (nq, nbands), J
    coefficients: np.ndarray    # (nq, nbands, size), complex

    def band_centers(self) -> np.ndarray:
        """Quasimomentum average of each band, J."""
        return self.energies.mean(axis=0)

    def band_widths(self) -> np.ndarray:
        return self.energies.max(axis=0) - self.energies.min(axis=0)

    def band_gaps_below(self) -> np.ndarray:
        """Gap from each band to the one below; band 0 uses the gap above."""
        lo = self.energies.min(axis=0)
        hi = self.energies.max(axis=0)
        gaps = np.empty(self.energies.shape[1])
        gaps[1:] = lo[1:] - hi[:-1]
        gaps[0] = lo[1] - hi[0] if len(lo) > 1 else np.inf
        return gaps


def _hamiltonian_stack(cfg: LatticeConfig, spin: SpinState,
                       cutoff: int, q_grid: np.ndarray) -> np.ndarray:
    """Complex Hermitian H(q) for every q, shape (nq, n, n)."""
    v0, v1 = potential_fourier(cfg, spin)
    er = cfg.params.recoil_energy
    js = np.arange(-cutoff, cutoff + 1)
    n = js.size
    h = np.zeros((q_grid.size, n, n), dtype=complex)
    diag = er * (q_grid[:, None] + 2.0 * js[None, :]) ** 2 + v0
    idx = np.arange(n)
    h[:, idx, idx] = diag
    # <j+1| U |j> multiplies e^{+2ikz}
    h[:, idx[1:], idx[:-1]] = v1
    h[:, idx[:-1], idx[1:]] = np.conj(v1)
    return h


def diagonalize(cfg: LatticeConfig, spin: SpinState, basis: BlochBasisSpec,
                check_convergence: bool = True,
                tol_recoils: float = 1e-8) -> EigenSolution:
    """Solve the Bloch problem for one spin state on the basis q-grid.

    With check_convergence the cutoff is doubled and all reported band
    energies must stay put to tol_recoils * E_R, otherwise
    ConvergenceError is raised.
    """
    q = basis.q_grid
    h = _hamiltonian_stack(cfg, spin, basis.plane_wave_cutoff, q)
    vals, vecs = np.linalg.eigh(h)
    nb = basis.band_count
    energies = vals[:, :nb]
    coeffs = np.transpose(vecs[:, :, :nb], (0, 2, 1))

    if check_convergence:
        h2 = _hamiltonian_stack(cfg, spin, 2 * basis.plane_wave_cutoff, q)
        vals2 = np.linalg.eigvalsh(h2)[:, :nb]
        drift = np.max(np.abs(vals2 - energies)) / cfg.params.recoil_energy
        if drift > tol_recoils:
            raise ConvergenceError(
                f"cutoff {basis.plane_wave_cutoff} not converged: "
                f"doubling moves energies by {drift:.2e} E_R")

    return EigenSolution(cfg=cfg, spin=spin, basis=basis, q_grid=q,
                         energies=energies, coefficients=coeffs)


def bound_state_count(cfg: LatticeConfig, spin: SpinState,
                      sol: Optional[EigenSolution] = None) -> int:
    """Number of bands whose center lies below the potential maximum."""
    if sol is None:
        basis = BlochBasisSpec.for_config(
            cfg, band_count=max(8, default_cutoff(cfg.depth_plus_recoils) // 2))
        sol = diagonalize(cfg, spin, basis, check_convergence=False)
    a = cfg.params.lattice_spacing
    zz = np.linspace(-a / 2, a / 2, 4096)
    vmax = float(state_potential(zz, spin, cfg).max())
    return int(np.count_nonzero(sol.band_centers() < vmax))


def recommended_band_count(cfg: LatticeConfig, spin: SpinState,
                           extra: int = 4) -> int:
    """All bound bands plus a few continuum-edge states."""
    return bound_state_count(cfg, spin) + extra


@dataclass(frozen=True)
class LocalizedStates:
    """Wannier-style states of one well, on a shared real-space grid."""

    cfg: LatticeConfig
    spin: SpinState
    site: int
    center: float               # well position, m
    positions: np.ndarray       # (nz,), m
    psi: np.ndarray             # (nbands, nz), complex, unit norm
    energies: np.ndarray        # band centers, J
    delocalized: np.ndarray     # (nbands,) bool

    @property
    def grid_step(self) -> float:
        return float(self.positions[1] - self.positions[0])

    def edge_amplitude(self) -> float:
        """Largest relative wavefunction amplitude on the grid boundary."""
        peak = np.abs(self.psi).max(axis=1)
        edges = np.maximum(np.abs(self.psi[:, 0]), np.abs(self.psi[:, -1]))
        return float((edges / peak).max())

    def take(self, n: int) -> "LocalizedStates":
        """View restricted to the lowest n bands."""
        if not 1 <= n <= self.psi.shape[0]:
            raise ValueError(
                f"cannot keep {n} of {self.psi.shape[0]} bands")
        return LocalizedStates(cfg=self.cfg, spin=self.spin, site=self.site,
                               center=self.center, positions=self.positions,
                               psi=self.psi[:n], energies=self.energies[:n],
                               delocalized=self.delocalized[:n])

    def bound(self) -> "LocalizedStates":
        """Truncate to the leading run of well-localized bands.

        Delocalized bands have no meaningful single-well representative
        (and their non-decaying tails fail the overlap edge check), so
        consumers building Franck-Condon matrices work on this view.
        """
        n = (int(np.argmax(self.delocalized)) if self.delocalized.any()
             else self.delocalized.size)
        if n == 0:
            raise ValueError(
                "no localized band at this lattice configuration")
        return self.take(n)


def _harmonic_trial(order: int, x: np.ndarray, x0: float) -> np.ndarray:
    """Harmonic-oscillator eigenfunction with ground-state width x0."""
    from scipy.special import eval_hermite

    xi = x / (x0 * math.sqrt(2.0))
    log_norm = -0.5 * (order * math.log(2.0) + math.lgamma(order + 1.0)
                       + 0.5 * math.log(math.pi))
    psi = eval_hermite(order, xi) * np.exp(-xi ** 2 / 2.0)
    # normalize on the grid instead of analytically, robust to truncation
    psi = psi * math.exp(log_norm)
    norm = math.sqrt(np.trapezoid(psi ** 2, x))
    return psi / norm if norm > 0 else psi


def localized_states(sol: EigenSolution, site: int = 0,
                     points_per_period: int = 128,
                     periods: int = 8,
                     width_gap_ratio: float = 0.10,
                     grid_center: Optional[float] = None) -> LocalizedStates:
    """Build phase-fixed localized states for every band of one spin.

    Bloch states are summed over quasimomentum with a deterministic gauge
    fixed by projection onto harmonic-oscillator trials at the well
    center; the overall phase is rotated so the amplitude of largest
    modulus is real positive.  Bands whose width exceeds
    width_gap_ratio of the gap below are flagged delocalized (their
    localized representative is still returned).

    grid_center recenters the position grid (default: the well center);
    overlap integrals between two spin manifolds need one shared grid
    covering both displaced wells.
    """
    cfg, spin = sol.cfg, sol.spin
    a = cfg.params.lattice_spacing
    k = cfg.params.wavenumber
    center = well_minimum(cfg, spin) + site * a
    if grid_center is None:
        grid_center = center

    nz = points_per_period * periods
    z = grid_center + (np.arange(nz) / points_per_period
                       - periods / 2.0) * a
    dz = a / points_per_period

    js = np.arange(-sol.basis.plane_wave_cutoff, sol.basis.plane_wave_cutoff + 1)
    # phases (nq, nz): e^{i(q + 2j)k z} assembled per q below
    nb = sol.basis.band_count
    nq = sol.q_grid.size

    # effective ground width from the harmonic view of this spin's well
    nu = depth_to_frequency(max(well_depth(cfg, spin),
                                1e-12 * cfg.depth_plus), cfg.params)
    x0 = math.sqrt(HBAR / (2.0 * cfg.params.atom_mass * 2.0 * math.pi * nu))
    trials = np.array([_harmonic_trial(n, z - center, x0) for n in range(nb)])

    waves = np.empty((nq, nb, nz), dtype=complex)
    for iq, q in enumerate(sol.q_grid):
        phases = np.exp(1j * (q + 2.0 * js)[:, None] * k * z[None, :])
        waves[iq] = sol.coefficients[iq] @ phases / math.sqrt(a)

    # projection gauge: overlap with the matching trial is real positive.
    # rotating waves by ov/|ov| sends <w|g> = ov to |ov|; a state
    # amplitude v instead needs conj(v)/|v| (it rotates with the state),
    # so the weak-projection fallback stores conj(v) in the same array.
    overlaps = np.einsum("qbz,bz->qb", np.conj(waves), trials) * dz
    mags = np.abs(overlaps)
    # delocalized or node-misaligned bands can have tiny projections; fall
    # back to the dominant amplitude's phase so the gauge stays defined
    weak = mags < 1e-8
    if np.any(weak):
        flat = np.argmax(np.abs(waves), axis=2)
        dom = np.take_along_axis(
            waves, flat[:, :, None], axis=2)[:, :, 0]
        overlaps = np.where(weak, np.conj(dom), overlaps)
        mags = np.abs(overlaps)
    waves *= (overlaps / mags)[:, :, None]

    psi = waves.mean(axis=0)
    norms = np.sqrt((np.abs(psi) ** 2).sum(axis=1) * dz)
    psi /= norms[:, None]

    # global phase: largest-modulus amplitude real positive
    peak_idx = np.argmax(np.abs(psi), axis=1)
    peak = np.take_along_axis(psi, peak_idx[:, None], axis=1)[:, 0]
    psi *= (np.conj(peak) / np.abs(peak))[:, None]

    widths = sol.band_widths()
    gaps = sol.band_gaps_below()
    deloc = widths >= width_gap_ratio * np.maximum(gaps, 1e-300)

    return LocalizedStates(cfg=cfg, spin=spin, site=site, center=center,
                           positions=z, psi=psi,
                           energies=sol.band_centers(),
                           delocalized=deloc)


@dataclass(frozen=True)
class TransitionTable:
    """Microwave line centers/widths between the two spin manifolds.

    Centers are offsets (Hz) from the field-shifted hyperfine splitting;
    widths are the quasimomentum spread of the vertical transition.
    """

    centers: np.ndarray    # (n1, n0), Hz
    widths: np.ndarray     # (n1, n0), Hz

    def center(self, n: int, nprime: int) -> float:
        return float(self.centers[nprime, n])

    def width(self, n: int, nprime: int) -> float:
        return float(self.widths[nprime, n])

    def rows(self):
        n1, n0 = self.centers.shape
        for n in range(n0):
            for np_ in range(n1):
                yield n, np_, float(self.centers[np_, n]), float(self.widths[np_, n])


def transition_table(sol0: EigenSolution, sol1: EigenSolution) -> TransitionTable:
    """Vertical (q-conserving) transition centers and widths, in Hz."""
    if not np.allclose(sol0.q_grid, sol1.q_grid):
        raise ValueError("spin solutions must share the quasimomentum grid")
    diff = (sol1.energies[:, :, None] - sol0.energies[:, None, :]) / H_PLANCK
    return TransitionTable(centers=diff.mean(axis=0),
                           widths=diff.max(axis=0) - diff.min(axis=0))


def transition_depth_scan(cfg: LatticeConfig, depths: Sequence[float],
                          pairs: Sequence[Tuple[int, int]],
                          band_count: int = 4,
                          q_points: int = 32) -> np.ndarray:
    """Line centers vs lattice depth (J); rows depths, columns pairs.

    Returns an array of shape (len(depths), len(pairs), 2) holding
    (center_Hz, width_Hz) for each requested (n, nprime).
    """
    import dataclasses

    out = np.empty((len(depths), len(pairs), 2))
    for i, d in enumerate(depths):
        ci = dataclasses.replace(cfg, depth_plus=float(d))
        basis = BlochBasisSpec.for_config(ci, band_count=band_count,
                                          q_points=q_points)
        s0 = diagonalize(ci, SpinState.S0, basis, check_convergence=False)
        s1 = diagonalize(ci, SpinState.S1, basis, check_convergence=False)
        table = transition_table(s0, s1)
        for j, (n, np_) in enumerate(pairs):
            out[i, j, 0] = table.center(n, np_)
            out[i, j, 1] = table.width(n, np_)
    return out
