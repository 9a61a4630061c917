"""Pulsed spin-motion dynamics in the rotating frame of the microwave.

The drive couples the two spin manifolds with matrix elements
Omega_0(t)/2 * M[n'][n] while each manifold keeps its motional level
structure on the diagonal.  In the frame rotating at the drive
frequency the upper manifold is shifted down by the drive offset, so a
detuning enters as a uniform diagonal shift of one block.  Rectangular
pulses are propagated exactly through an eigendecomposition; shaped
pulses use a norm-exact split-step propagator (diagonal phases around a
pre-diagonalized coupling block) on envelope-adapted sub-intervals,
refined by step doubling until the output populations settle.

All frequencies are ordinary frequencies in Hz; every 2 pi lives inside
the propagators.  Hamiltonian fields and the detuning may carry leading
batch axes, which broadcast together; a stack of initial states adds
one more axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from .constants import H_PLANCK, TWO_PI
from .lattice import LatticeConfig, SpinState, well_minimum
from .bands import (
    BlochBasisSpec,
    EigenSolution,
    LocalizedStates,
    diagonalize,
    localized_states,
    recommended_band_count,
)
from .coupling import CouplingMatrix, franck_condon_matrix


class IntegratorError(RuntimeError):
    """Raised when step refinement fails to settle the populations."""


# ---------------------------------------------------------------------------
# pulses


@dataclass(frozen=True)
class Pulse:
    """Microwave pulse: bare Rabi frequency, envelope and frequency offset."""

    bare_rabi: float              # Omega_0, Hz
    duration: float               # s
    shape: str = "rectangular"    # or "gaussian"
    detuning: float = 0.0         # Hz, relative to the Hamiltonian reference
    phase: float = 0.0            # rad
    fwhm: Optional[float] = None  # s, gaussian only
    truncation_fwhms: float = 3.0

    def __post_init__(self):
        if self.bare_rabi < 0:
            raise ValueError("bare_rabi must be nonnegative")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.shape not in ("rectangular", "gaussian"):
            raise ValueError(f"unknown pulse shape {self.shape!r}")
        if self.shape == "gaussian" and (self.fwhm is None or self.fwhm <= 0):
            raise ValueError("gaussian pulse needs a positive fwhm")

    @classmethod
    def gaussian(cls, bare_rabi: float, fwhm: float,
                 truncation_fwhms: float = 3.0, **kw) -> "Pulse":
        """Gaussian envelope truncated at +-truncation_fwhms * fwhm."""
        return cls(bare_rabi=bare_rabi,
                   duration=2.0 * truncation_fwhms * fwhm,
                   shape="gaussian", fwhm=fwhm,
                   truncation_fwhms=truncation_fwhms, **kw)

    def envelope(self, t) -> np.ndarray:
        """Dimensionless envelope in [0, 1] for t in [0, duration]."""
        t = np.asarray(t, dtype=float)
        if self.shape == "rectangular":
            return np.ones_like(t)
        u = (t - self.duration / 2.0) / self.fwhm
        return np.exp(-4.0 * math.log(2.0) * u ** 2)

    @property
    def envelope_integral(self) -> float:
        """Integral of the envelope over the pulse window, in s."""
        if self.shape == "rectangular":
            return self.duration
        c = self.duration / (2.0 * self.fwhm)
        return self.fwhm * math.sqrt(math.pi / (4.0 * math.log(2.0))) \
            * float(erf(2.0 * math.sqrt(math.log(2.0)) * c))

    @property
    def area_pi(self) -> float:
        """Bare pulse area in units of pi.

        A rectangular pulse with Omega_0 * duration = 1/2 is a pi pulse
        on a line with |M| = 1.
        """
        return 2.0 * self.bare_rabi * self.envelope_integral


def pulse_for_area(area_pi: float, coupling_abs: float, fwhm: float,
                   truncation_fwhms: float = 3.0, **kw) -> Pulse:
    """Gaussian pulse with the given area (units of pi) on a line whose
    coupling magnitude is coupling_abs."""
    if coupling_abs <= 0:
        raise ValueError("coupling_abs must be positive")
    probe = Pulse.gaussian(1.0, fwhm, truncation_fwhms)
    omega0 = area_pi / (2.0 * coupling_abs * probe.envelope_integral)
    return Pulse.gaussian(omega0, fwhm, truncation_fwhms, **kw)


# ---------------------------------------------------------------------------
# Hamiltonian containers


@dataclass(frozen=True)
class DriveHamiltonian:
    """Two-manifold rotating-frame Hamiltonian data.

    energies0/energies1 hold the motional level energies of each spin
    manifold in Hz (their common hyperfine offset is absorbed into
    reference); coupling[..., n', n] is the dimensionless matrix element
    between |0,n> and |1,n'>.  reference is the drive offset (in Hz,
    relative to the bare spin splitting) at which detuning zero sits.
    """

    energies0: np.ndarray    # (..., N0), Hz
    energies1: np.ndarray    # (..., N1), Hz
    coupling: np.ndarray     # (..., N1, N0), complex
    reference: float         # Hz

    def __post_init__(self):
        e0 = np.atleast_1d(np.asarray(self.energies0, dtype=float))
        e1 = np.atleast_1d(np.asarray(self.energies1, dtype=float))
        m = np.asarray(self.coupling, dtype=complex)
        if m.ndim < 2:
            raise ValueError("coupling must be at least two-dimensional")
        if m.shape[-2] != e1.shape[-1] or m.shape[-1] != e0.shape[-1]:
            raise ValueError("coupling shape must match the manifold sizes")
        object.__setattr__(self, "energies0", e0)
        object.__setattr__(self, "energies1", e1)
        object.__setattr__(self, "coupling", m)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.energies0.shape[-1], self.energies1.shape[-1]

    def line_reference(self, n: int, nprime: int) -> float:
        """Center offset (Hz) of the |0,n> <-> |1,n'> line, averaged
        over any batch axes."""
        return float(np.mean(self.energies1[..., nprime])
                     - np.mean(self.energies0[..., n]))

    def basis_state(self, spin: SpinState, n: int) -> np.ndarray:
        n0, n1 = self.dims
        count = n0 if spin is SpinState.S0 else n1
        if not 0 <= n < count:
            raise ValueError(f"level {n} outside manifold of size {count}")
        psi = np.zeros(n0 + n1, dtype=complex)
        psi[n if spin is SpinState.S0 else n0 + n] = 1.0
        return psi


def double_well_hamiltonian(loc0: LocalizedStates, loc1: LocalizedStates,
                            cm: CouplingMatrix,
                            reference_line: Tuple[int, int] = (0, 0)
                            ) -> DriveHamiltonian:
    """Localized-basis Hamiltonian with the drive referenced to a line."""
    ham = DriveHamiltonian(energies0=loc0.energies / H_PLANCK,
                           energies1=loc1.energies / H_PLANCK,
                           coupling=cm.elements, reference=0.0)
    return replace(ham, reference=ham.line_reference(*reference_line))


def bloch_drive_hamiltonian(sol0: EigenSolution, sol1: EigenSolution,
                            reference_line: Tuple[int, int] = (0, 0)
                            ) -> DriveHamiltonian:
    """Quasimomentum-resolved Hamiltonian batch (the microwave carries
    negligible momentum, so q is conserved and acts as a batch axis).

    The coupling at each q is the overlap of the Bloch eigenvectors in
    the shared plane-wave basis.
    """
    if sol0.basis.plane_wave_cutoff != sol1.basis.plane_wave_cutoff:
        raise ValueError("spin solutions must share the plane-wave cutoff")
    if not np.allclose(sol0.q_grid, sol1.q_grid):
        raise ValueError("spin solutions must share the quasimomentum grid")
    m_q = np.einsum("qaj,qbj->qab", np.conj(sol1.coefficients),
                    sol0.coefficients)
    ham = DriveHamiltonian(energies0=sol0.energies / H_PLANCK,
                           energies1=sol1.energies / H_PLANCK,
                           coupling=m_q, reference=0.0)
    return replace(ham, reference=ham.line_reference(*reference_line))


# ---------------------------------------------------------------------------
# propagation


def _coupling_block(ham: DriveHamiltonian, phase: float) -> np.ndarray:
    """Hermitian coupling matrix at unit drive amplitude, natural batch."""
    n0, n1 = ham.dims
    batch = ham.coupling.shape[:-2]
    dim = n0 + n1
    b = np.zeros(batch + (dim, dim), dtype=complex)
    m = ham.coupling * np.exp(1j * phase)
    b[..., n0:, :n0] = m
    b[..., :n0, n0:] = np.conj(np.swapaxes(m, -1, -2))
    return b


def _diagonal(ham: DriveHamiltonian, detuning) -> np.ndarray:
    """Rotating-frame diagonal (..., N0+N1) in Hz.

    The detuning broadcasts in from the left and shifts the upper
    manifold down.
    """
    shift = np.asarray(ham.reference + np.asarray(detuning, dtype=float))
    e0 = ham.energies0
    e1 = ham.energies1 - shift[..., None]
    batch = np.broadcast_shapes(e0.shape[:-1], e1.shape[:-1])
    e0 = np.broadcast_to(e0, batch + e0.shape[-1:])
    e1 = np.broadcast_to(e1, batch + e1.shape[-1:])
    return np.concatenate([e0, e1], axis=-1)


def _arc_boundaries(pulse: Pulse, times: np.ndarray, min_steps: int = 64,
                    arc_target: float = 1e-3, max_steps: int = 4096
                    ) -> np.ndarray:
    """Sub-interval boundaries with bounded envelope change per step.

    Boundaries sit at equal increments of the envelope arc length
    (about arc_target change per step, capped at max_steps), merged with
    a uniform floor grid and the requested output times.
    """
    t_fine = np.linspace(0.0, pulse.duration, 8193)
    env = pulse.envelope(t_fine)
    arc = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(env)))])
    total = float(arc[-1])
    n_arc = int(min(max_steps, max(min_steps, math.ceil(total / arc_target))))
    # keep the parameter strictly increasing across envelope plateaus
    s = arc + t_fine * (max(total, 1.0) * 1e-6 / pulse.duration)
    targets = np.linspace(s[0], s[-1], n_arc + 1)
    pts = np.interp(targets, s, t_fine)
    floor = np.linspace(0.0, pulse.duration, min_steps + 1)
    bounds = np.unique(np.concatenate([pts, floor, times]))
    return np.clip(bounds, 0.0, pulse.duration)


def _propagate_exact(diag: np.ndarray, block: np.ndarray, amp: float,
                     psi0: np.ndarray, t_req: np.ndarray) -> np.ndarray:
    """Constant-Hamiltonian propagation of H = diag + amp * block.

    psi0 has shape (m, dim); returns (nt,) + batch + (m, dim).
    """
    dim = diag.shape[-1]
    h = block * amp + np.eye(dim) * diag[..., None, :]
    w, v = np.linalg.eigh(h)
    proj = np.einsum("...ji,mj->...mi", np.conj(v), psi0)
    outs = []
    for t in t_req:
        phases = np.exp(-1j * TWO_PI * w * float(t))
        outs.append(np.einsum("...ij,...mj->...mi", v,
                              phases[..., None, :] * proj))
    return np.stack(outs, axis=0)


def _propagate_split(diag: np.ndarray, wb: np.ndarray, vb: np.ndarray,
                     pulse: Pulse, psi0: np.ndarray, bounds: np.ndarray,
                     t_req: np.ndarray) -> np.ndarray:
    """Strang-split propagation across bounds; every requested time must
    be a member of bounds.  Returns (nt,) + batch + (m, dim)."""
    out_idx = np.searchsorted(bounds, t_req)
    if not np.allclose(bounds[out_idx], t_req, rtol=0, atol=1e-15):
        raise AssertionError("output times missing from step boundaries")
    batch = np.broadcast_shapes(diag.shape[:-1], wb.shape[:-1])
    psi = np.broadcast_to(psi0, batch + psi0.shape).astype(complex).copy()
    diag_m = diag[..., None, :]
    wb_m = wb[..., None, :]
    outs = {}
    if out_idx[0] == 0:
        outs[0] = psi.copy()
    mids = 0.5 * (bounds[1:] + bounds[:-1])
    envs = pulse.envelope(mids)
    dts = np.diff(bounds)
    wanted = set(int(i) for i in out_idx)
    for i, (dt, g) in enumerate(zip(dts, envs)):
        half = np.exp(-1j * TWO_PI * diag_m * (dt / 2.0))
        psi = half * psi
        amp = pulse.bare_rabi * g / 2.0
        proj = np.einsum("...ji,...mj->...mi", np.conj(vb), psi)
        proj = proj * np.exp(-1j * TWO_PI * wb_m * (amp * dt))
        psi = np.einsum("...ij,...mj->...mi", vb, proj)
        psi = half * psi
        if (i + 1) in wanted:
            outs[i + 1] = psi.copy()
    return np.stack([outs[int(i)] for i in out_idx], axis=0)


def evolve(ham: DriveHamiltonian, pulse: Pulse, initial: np.ndarray,
           times: Optional[Sequence[float]] = None,
           detuning=None,
           population_tol: float = 1e-6,
           max_refinements: int = 6) -> np.ndarray:
    """Propagate initial state(s) through the pulse.

    Parameters
    ----------
    initial : (dim,) state or (m, dim) stack of states.
    times : increasing times in [0, duration]; None means pulse end.
    detuning : overrides pulse.detuning; an array adds batch axes that
        broadcast against the Hamiltonian batch from the left.

    Returns the complex state array with shape
    batch + ([nt,] [m,] dim), the nt and m axes appearing only when
    `times` (resp. a stacked `initial`) was supplied.
    """
    det = pulse.detuning if detuning is None else detuning
    diag = _diagonal(ham, det)
    block = _coupling_block(ham, pulse.phase)

    single_time = times is None
    t_req = np.array([pulse.duration] if single_time
                     else np.asarray(times, dtype=float), dtype=float)
    if t_req.ndim != 1 or t_req.size == 0:
        raise ValueError("times must be a one-dimensional sequence")
    if np.any(np.diff(t_req) < 0):
        raise ValueError("times must be sorted ascending")
    if t_req[0] < 0 or t_req[-1] > pulse.duration * (1 + 1e-9):
        raise ValueError("requested times must lie within the pulse window")

    psi0 = np.asarray(initial, dtype=complex)
    single_state = psi0.ndim == 1
    if single_state:
        psi0 = psi0[None, :]
    if psi0.ndim != 2 or psi0.shape[-1] != sum(ham.dims):
        raise ValueError("initial must have shape (dim,) or (m, dim)")

    if pulse.shape == "rectangular":
        out = _propagate_exact(diag, block, pulse.bare_rabi / 2.0,
                               psi0, t_req)
    else:
        wb, vb = np.linalg.eigh(block)
        bounds = _arc_boundaries(pulse, t_req)
        prev = None
        for _ in range(max_refinements + 1):
            run = _propagate_split(diag, wb, vb, pulse, psi0, bounds, t_req)
            if prev is not None and np.max(
                    np.abs(np.abs(run) ** 2 - np.abs(prev) ** 2)) \
                    < population_tol:
                break
            prev = run
            mids = 0.5 * (bounds[1:] + bounds[:-1])
            bounds = np.unique(np.concatenate([bounds, mids]))
        else:
            raise IntegratorError(
                "populations still moving by more than "
                f"{population_tol} after {max_refinements} step halvings")
        out = run

    out = np.moveaxis(out, 0, -3)   # -> batch + (nt, m, dim)
    if single_time:
        out = out[..., 0, :, :]
    if single_state:
        out = out[..., 0, :]
    return out


def transfer_population(psi: np.ndarray, n0: int,
                        target: SpinState) -> np.ndarray:
    """Total population of one spin manifold (last axis = state)."""
    p = np.abs(psi) ** 2
    return p[..., n0:].sum(axis=-1) if target is SpinState.S1 \
        else p[..., :n0].sum(axis=-1)


# ---------------------------------------------------------------------------
# Rabi traces


@dataclass(frozen=True)
class RabiTrace:
    times: np.ndarray        # s
    transfer: np.ndarray     # population in the other spin manifold
    effective_rabi: float    # Omega_0 |M| of the strongest line out, Hz
    resolvable: bool         # False when the drive saturates the spectrum


def rabi_trace(ham: DriveHamiltonian, pulse: Pulse, times: Sequence[float],
               initial: Tuple[SpinState, int]) -> RabiTrace:
    """Transfer trace out of one motional level.

    The pulse detuning is relative to ham.reference, so detuning = 0
    drives the reference line resonantly.  The trace starts at exactly
    zero transfer; any Hamiltonian batch axes are averaged (uniform
    weight), which is the correct reduction for a q-resolved batch.
    """
    spin, n = initial
    psi0 = ham.basis_state(spin, n)
    times = np.asarray(times, dtype=float)
    psi = evolve(ham, pulse, psi0, times=times)
    target = SpinState.S1 if spin is SpinState.S0 else SpinState.S0
    transfer = transfer_population(psi, ham.dims[0], target)
    if transfer.ndim > 1:
        transfer = transfer.mean(axis=tuple(range(transfer.ndim - 1)))

    m = np.abs(ham.coupling)
    if m.ndim > 2:
        m = m.mean(axis=tuple(range(m.ndim - 2)))
    col = m[:, n] if spin is SpinState.S0 else m[n, :]
    omega_eff = pulse.bare_rabi * float(col.max())
    spacings = []
    for e in (ham.energies0, ham.energies1):
        e = e.reshape(-1, e.shape[-1]).mean(axis=0)
        if e.size > 1:
            spacings.append(float(np.min(np.abs(np.diff(e)))))
    resolvable = (not spacings) or omega_eff < 0.5 * min(spacings)
    return RabiTrace(times=times, transfer=transfer,
                     effective_rabi=omega_eff, resolvable=bool(resolvable))


def tone_amplitude(times: np.ndarray, signal: np.ndarray,
                   freq: float) -> float:
    """Amplitude of the cosine component at freq in a uniform trace.

    Hann-windowed projection, normalized so that a pure tone
    A cos(2 pi freq t) + const returns about A when the tone is well
    inside the trace bandwidth.
    """
    times = np.asarray(times, dtype=float)
    signal = np.asarray(signal, dtype=float)
    w = np.hanning(times.size)
    s = (signal - signal.mean()) * w
    z = np.exp(-1j * TWO_PI * freq * times)
    return 2.0 * abs(np.sum(s * z)) / float(w.sum())


def extract_rabi(times: np.ndarray, signal: np.ndarray,
                 min_periods: float = 3.0) -> float:
    """Dominant oscillation frequency (Hz) of a population trace.

    Hann-windowed, zero-padded FFT with quadratic peak interpolation;
    raises if the trace spans fewer than min_periods oscillations.
    """
    times = np.asarray(times, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if times.size < 8:
        raise ValueError("trace too short")
    dt = times[1] - times[0]
    if not np.allclose(np.diff(times), dt, rtol=1e-6, atol=0):
        raise ValueError("trace must be uniformly sampled")
    span = times[-1] - times[0]

    w = np.hanning(times.size)
    s = (signal - signal.mean()) * w
    npad = 8 * times.size
    spec = np.abs(np.fft.rfft(s, n=npad))
    freqs = np.fft.rfftfreq(npad, dt)
    lo = np.searchsorted(freqs, 1.0 / span)   # skip the DC foot
    k = lo + int(np.argmax(spec[lo:]))
    if 0 < k < spec.size - 1:
        y0, y1, y2 = spec[k - 1], spec[k], spec[k + 1]
        denom = y0 - 2.0 * y1 + y2
        shift = float(np.clip(0.5 * (y0 - y2) / denom, -0.5, 0.5)) \
            if denom != 0 else 0.0
    else:
        shift = 0.0
    f = float(freqs[k] + shift * (freqs[1] - freqs[0]))
    if f * span < min_periods:
        raise ValueError(
            f"trace spans only {f * span:.2f} periods of the dominant "
            f"oscillation; need at least {min_periods}")
    return f


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True)
class SpectrumResult:
    detunings: np.ndarray              # Hz, relative to the reference line
    transfer: np.ndarray               # spin-flip probability
    sample_std: Optional[np.ndarray]   # std error over inhomogeneity samples
    reference: float                   # Hz, line offset from bare splitting
    initial_spin: SpinState


def _initial_weights(ensemble, n_levels: int) -> np.ndarray:
    """Occupation vector from an ensemble object, array, or None."""
    if ensemble is None:
        p = np.zeros(n_levels)
        p[0] = 1.0
        return p
    pops = getattr(ensemble, "populations", ensemble)
    p = np.zeros(n_levels)
    k = min(n_levels, len(pops))
    p[:k] = np.asarray(pops, dtype=float)[:k]
    s = p.sum()
    if not 0 < s <= 1 + 1e-9:
        raise ValueError("ensemble populations must sum into (0, 1]")
    return p / s


def _shift_averaged_scan(detunings: np.ndarray, transfer_fn: Callable,
                         shift_fn: Callable, slope: float, inhom,
                         seed: int):
    """Average a spectrum by rigid line shifts per sample.

    transfer_fn(grid) evaluates the nominal spectrum on a detuning
    grid; shift_fn(depth_total) gives the line-center displacement of a
    depth-scaled lattice.  Each sample's spectrum is the nominal one
    displaced by its depth and Zeeman shifts — exact for a field
    offset, and accurate for depth spreads small enough to leave the
    couplings unchanged (the line positions move far more than the
    matrix elements at percent-level depth spread).
    """
    from .ensembles import sample_set
    samples = sample_set(inhom, seed)
    shifts = np.array([shift_fn(float(d * r)) + slope * float(b)
                       for d, b, r in zip(samples.depth_factor,
                                          samples.b_offset,
                                          samples.radial_factor)])
    # the sample's transfer at lab detuning x is nominal(x - shift)
    step = float(np.median(np.diff(detunings))) if detunings.size > 1 \
        else max(abs(float(shifts.max() - shifts.min())), 1.0)
    lo = detunings.min() - max(shifts.max(), 0.0)
    hi = detunings.max() - min(shifts.min(), 0.0)
    n = int(math.ceil((hi - lo) / step)) + 1
    grid = lo + np.arange(n) * step
    base = transfer_fn(grid)
    stack = np.stack([np.interp(detunings - s, grid, base)
                      for s in shifts])
    mean = stack.mean(axis=0)
    std = stack.std(axis=0, ddof=1) if stack.shape[0] > 1 \
        else np.zeros_like(mean)
    return mean, std


def _averaged_scan(detunings: np.ndarray, observable: Callable,
                   transfer_fn: Callable, shift_fn: Callable, slope: float,
                   inhom, inhom_mode: str, seed: int):
    """Dispatch between no averaging, shift averaging, and full rebuild."""
    if inhom is None or getattr(inhom, "is_trivial", False):
        return transfer_fn(detunings), None
    if inhom_mode == "shift":
        return _shift_averaged_scan(detunings, transfer_fn, shift_fn,
                                    slope, inhom, seed)
    if inhom_mode == "rebuild":
        from .ensembles import inhomogeneous_average
        return inhomogeneous_average(observable, inhom, seed=seed)
    raise ValueError(f"unknown inhom_mode {inhom_mode!r}")


def deep_spectrum(cfg: LatticeConfig, pulse: Pulse, detunings,
                  *, initial_spin: SpinState = SpinState.S1,
                  ensemble=None, band_count: Optional[int] = None,
                  q_points: int = 16, points_per_period: int = 128,
                  periods: int = 8, reference_line: Tuple[int, int] = (0, 0),
                  inhom=None, inhom_mode: str = "shift",
                  seed: int = 0) -> SpectrumResult:
    """Spin-flip spectrum in the localized basis.

    Valid deep in the lattice where tunneling is negligible: levels are
    localized states of each well and the drive connects the displaced
    wells.  Inhomogeneity enters either as rigid line shifts
    (inhom_mode="shift", one propagation) or an exact per-sample
    rebuild (inhom_mode="rebuild").
    """
    detunings = np.asarray(detunings, dtype=float)
    slope = cfg.params.zeeman_slope

    def build(depth_factor: float) -> DriveHamiltonian:
        c = replace(cfg, depth_plus=cfg.depth_plus * depth_factor)
        n0 = band_count or recommended_band_count(c, SpinState.S0)
        n1 = band_count or recommended_band_count(c, SpinState.S1)
        basis0 = BlochBasisSpec.for_config(c, band_count=n0,
                                           q_points=q_points)
        basis1 = BlochBasisSpec.for_config(c, band_count=n1,
                                           q_points=q_points)
        sol0 = diagonalize(c, SpinState.S0, basis0, check_convergence=False)
        sol1 = diagonalize(c, SpinState.S1, basis1, check_convergence=False)
        center = 0.5 * (well_minimum(c, SpinState.S0)
                        + well_minimum(c, SpinState.S1))
        loc0 = localized_states(sol0, points_per_period=points_per_period,
                                periods=periods, grid_center=center).bound()
        loc1 = localized_states(sol1, points_per_period=points_per_period,
                                periods=periods, grid_center=center).bound()
        cm = franck_condon_matrix(loc0, loc1)
        return double_well_hamiltonian(loc0, loc1, cm,
                                       reference_line=reference_line)

    ham0 = build(1.0)
    ref = ham0.reference
    n_init = ham0.dims[0 if initial_spin is SpinState.S0 else 1]
    weights = _initial_weights(ensemble, n_init)
    target = SpinState.S1 if initial_spin is SpinState.S0 else SpinState.S0
    n, nprime = reference_line

    def transfer_fn(grid: np.ndarray, ham: DriveHamiltonian = None
                    ) -> np.ndarray:
        h = ham if ham is not None else ham0
        init = np.stack([h.basis_state(initial_spin, lvl)
                         for lvl in range(len(weights))])
        psi = evolve(h, pulse, init, detuning=np.asarray(grid))
        return transfer_population(psi, h.dims[0], target) @ weights

    def shift_fn(depth_total: float) -> float:
        c = replace(cfg, depth_plus=cfg.depth_plus * depth_total)
        basis = BlochBasisSpec.for_config(
            c, band_count=max(n, nprime) + 2, q_points=max(q_points, 8))
        sol0 = diagonalize(c, SpinState.S0, basis, check_convergence=False)
        sol1 = diagonalize(c, SpinState.S1, basis, check_convergence=False)
        center = float(np.mean(sol1.energies[:, nprime]
                               - np.mean(sol0.energies[:, n]))) / H_PLANCK
        return center - ref

    def observable(depth_factor: float, b_offset: float,
                   radial_factor: float) -> np.ndarray:
        total = depth_factor * radial_factor
        ham = ham0 if total == 1.0 else build(total)
        # the line moves with depth; the lab detuning axis stays fixed
        delta_eff = detunings + (ref - ham.reference) - slope * b_offset
        return transfer_fn(delta_eff, ham)

    transfer, std = _averaged_scan(detunings, observable, transfer_fn,
                                   shift_fn, slope, inhom, inhom_mode, seed)
    return SpectrumResult(detunings=detunings, transfer=transfer,
                          sample_std=std, reference=ref,
                          initial_spin=initial_spin)


def bloch_spectrum(cfg: LatticeConfig, pulse: Pulse, detunings,
                   *, initial_spin: SpinState = SpinState.S0,
                   ensemble=None, band_count: int = 6, q_points: int = 32,
                   reference_line: Tuple[int, int] = (0, 0),
                   inhom=None, inhom_mode: str = "shift",
                   seed: int = 0) -> SpectrumResult:
    """Spin-flip spectrum from full band-structure dynamics.

    The drive conserves quasimomentum, so each q evolves independently
    with the Bloch-state couplings; the result averages a uniform q
    filling.  Required in shallow lattices where the bands disperse.
    """
    detunings = np.asarray(detunings, dtype=float)
    slope = cfg.params.zeeman_slope
    n, nprime = reference_line

    def build(depth_factor: float) -> DriveHamiltonian:
        c = replace(cfg, depth_plus=cfg.depth_plus * depth_factor)
        basis = BlochBasisSpec.for_config(c, band_count=band_count,
                                          q_points=q_points)
        sol0 = diagonalize(c, SpinState.S0, basis, check_convergence=False)
        sol1 = diagonalize(c, SpinState.S1, basis, check_convergence=False)
        return bloch_drive_hamiltonian(sol0, sol1,
                                       reference_line=reference_line)

    ham0 = build(1.0)
    ref = ham0.reference
    n_init = ham0.dims[0 if initial_spin is SpinState.S0 else 1]
    weights = _initial_weights(ensemble, n_init)
    target = SpinState.S1 if initial_spin is SpinState.S0 else SpinState.S0

    def transfer_fn(grid: np.ndarray, ham: DriveHamiltonian = None
                    ) -> np.ndarray:
        h = ham if ham is not None else ham0
        init = np.stack([h.basis_state(initial_spin, lvl)
                         for lvl in range(len(weights))])
        # batch axes: (n_detuning, n_q)
        psi = evolve(h, pulse, init, detuning=np.asarray(grid)[:, None])
        t = transfer_population(psi, h.dims[0], target)
        return t.mean(axis=1) @ weights

    def shift_fn(depth_total: float) -> float:
        ham = build(depth_total)
        return ham.reference - ref

    def observable(depth_factor: float, b_offset: float,
                   radial_factor: float) -> np.ndarray:
        total = depth_factor * radial_factor
        ham = ham0 if total == 1.0 else build(total)
        delta_eff = detunings + (ref - ham.reference) - slope * b_offset
        return transfer_fn(delta_eff, ham)

    transfer, std = _averaged_scan(detunings, observable, transfer_fn,
                                   shift_fn, slope, inhom, inhom_mode, seed)
    return SpectrumResult(detunings=detunings, transfer=transfer,
                          sample_std=std, reference=ref,
                          initial_spin=initial_spin)


# ---------------------------------------------------------------------------
# quantum walk in a shallow interleaved lattice


@dataclass(frozen=True)
class WalkResult:
    times: np.ndarray           # s
    node_positions: np.ndarray  # m, ordered along the axis
    populations: np.ndarray     # (nt, n_nodes)
    mean_x: np.ndarray          # m
    sigma_x: np.ndarray         # m
    p_spin0: np.ndarray         # population summed over the S0 sublattice
    hop_right: complex          # Omega_0/2 <1,j|0,j>, Hz
    hop_left: complex           # Omega_0/2 <1,j-1|0,j>, Hz
    rabi_period: float          # 1 / (Omega_0 |M_00|), s
    edge_max: float             # peak population in the outer node pairs
    valid: bool                 # True while the walk never hit the edge

    @property
    def n_sites(self) -> int:
        return self.node_positions.size // 2


def quantum_walk(cfg: LatticeConfig, bare_rabi: float, n_sites: int,
                 times, *, initial_site: Optional[int] = None,
                 band_count: Optional[int] = None, q_points: int = 32,
                 points_per_period: int = 128, periods: int = 12,
                 edge_tol: float = 1e-4) -> WalkResult:
    """Resonant carrier drive walking an atom across interleaved wells.

    With the spin manifolds displaced by half a site, every |0,j> well
    couples to both adjacent |1> wells with ground-band matrix elements
    of equal magnitude, so a resonant drive generates a coherent walk
    over the interleaved chain.  The chain is evolved exactly; the
    result is flagged invalid if population reaches the chain edge
    (finite-size artifact).
    """
    if n_sites < 4:
        raise ValueError("need at least 4 sites")
    times = np.asarray(times, dtype=float)
    a = cfg.params.lattice_spacing
    z0 = well_minimum(cfg, SpinState.S0)
    z1 = well_minimum(cfg, SpinState.S1)
    # S1 sites bracketing the S0 well at z0: one in (-a, 0], one in (0, a]
    site_left = math.floor((z0 - z1) / a)
    site_right = site_left + 1
    dx_right = z1 + site_right * a - z0

    nb0 = band_count or recommended_band_count(cfg, SpinState.S0)
    nb1 = band_count or recommended_band_count(cfg, SpinState.S1)
    basis0 = BlochBasisSpec.for_config(cfg, band_count=nb0,
                                       q_points=q_points)
    basis1 = BlochBasisSpec.for_config(cfg, band_count=nb1,
                                       q_points=q_points)
    sol0 = diagonalize(cfg, SpinState.S0, basis0)
    sol1 = diagonalize(cfg, SpinState.S1, basis1)

    def pair_coupling(site1: int) -> complex:
        center = 0.5 * (z0 + z1 + site1 * a)
        loc0 = localized_states(sol0, site=0,
                                points_per_period=points_per_period,
                                periods=periods, grid_center=center)
        loc1 = localized_states(sol1, site=site1,
                                points_per_period=points_per_period,
                                periods=periods, grid_center=center)
        # only the ground-band hop matters; higher bands decay too
        # slowly at walk depths to pass the window edge check
        return complex(franck_condon_matrix(loc0.take(1),
                                            loc1.take(1)).elements[0, 0])

    m_right = pair_coupling(site_right)   # neighbor at dx_right in (0, a]
    m_left = pair_coupling(site_left)     # neighbor at dx_right - a
    hop_r = bare_rabi / 2.0 * m_right
    hop_l = bare_rabi / 2.0 * m_left

    # nodes ordered by position: 2j = |0,j>, 2j+1 = the S1 node above it
    n_nodes = 2 * n_sites
    h = np.zeros((n_nodes, n_nodes), dtype=complex)
    for j in range(n_sites):
        h[2 * j + 1, 2 * j] = hop_r
        h[2 * j, 2 * j + 1] = np.conj(hop_r)
        if j >= 1:
            h[2 * (j - 1) + 1, 2 * j] = hop_l
            h[2 * j, 2 * (j - 1) + 1] = np.conj(hop_l)

    x = np.empty(n_nodes)
    x[0::2] = np.arange(n_sites) * a
    x[1::2] = np.arange(n_sites) * a + dx_right

    site0 = n_sites // 2 if initial_site is None else initial_site
    if not 0 <= site0 < n_sites:
        raise ValueError("initial_site outside the chain")
    psi0 = np.zeros(n_nodes, dtype=complex)
    psi0[2 * site0] = 1.0

    w, v = np.linalg.eigh(h)
    proj = np.conj(v.T) @ psi0
    phases = np.exp(-1j * TWO_PI * np.outer(times, w))
    psi_t = np.einsum("ij,tj->ti", v, phases * proj)
    pops = np.abs(psi_t) ** 2

    mean_x = pops @ x
    sigma_x = np.sqrt(np.maximum(pops @ x ** 2 - mean_x ** 2, 0.0))
    p_spin0 = pops[:, 0::2].sum(axis=1)
    edge_max = float(pops[:, [0, 1, -2, -1]].sum(axis=1).max())
    omega_eff = bare_rabi * max(abs(m_right), abs(m_left))
    return WalkResult(times=times, node_positions=x, populations=pops,
                      mean_x=mean_x, sigma_x=sigma_x, p_spin0=p_spin0,
                      hop_right=hop_r, hop_left=hop_l,
                      rabi_period=1.0 / omega_eff, edge_max=edge_max,
                      valid=edge_max < edge_tol)


def ballistic_fit(times: np.ndarray, sigma_x: np.ndarray,
                  window: Tuple[float, float] = (0.2, 1.0)
                  ) -> Tuple[float, float]:
    """Log-log growth exponent and linear speed of a spreading width.

    Fits sigma_x over the window (fractions of the final time); returns
    (exponent, speed), the speed from a through-origin linear fit, m/s.
    """
    times = np.asarray(times, dtype=float)
    sigma_x = np.asarray(sigma_x, dtype=float)
    t_max = times[-1]
    sel = (times >= window[0] * t_max) & (times <= window[1] * t_max) \
        & (times > 0) & (sigma_x > 0)
    if sel.sum() < 4:
        raise ValueError("too few points in the fit window")
    exponent = float(np.polyfit(np.log(times[sel]),
                                np.log(sigma_x[sel]), 1)[0])
    speed = float(np.sum(sigma_x[sel] * times[sel])
                  / np.sum(times[sel] ** 2))
    return exponent, speed


def spin_visibility(times: np.ndarray, p_spin0: np.ndarray,
                    period: float) -> Tuple[np.ndarray, np.ndarray]:
    """Per-period oscillation visibility of a spin population trace.

    Window i covers [i*period, (i+1)*period); visibility is
    (max - min) / (max + min) within the window.  Returns the window
    centers and visibilities of all complete windows.
    """
    times = np.asarray(times, dtype=float)
    p_spin0 = np.asarray(p_spin0, dtype=float)
    n_win = int(np.floor(times[-1] / period + 1e-9))
    centers, vis = [], []
    for i in range(n_win):
        sel = (times >= i * period) & (times < (i + 1) * period)
        if sel.sum() < 4:
            continue
        hi, lo = p_spin0[sel].max(), p_spin0[sel].min()
        if hi + lo <= 0:
            continue
        centers.append((i + 0.5) * period)
        vis.append((hi - lo) / (hi + lo))
    return np.asarray(centers), np.asarray(vis)
