"""Thermal motional ensembles, thermometry and inhomogeneous averaging.

A thermal (geometric) distribution over the levels of one well underlies
both thermometry methods: the sideband area ratio R = nbar/(1+nbar)
inverts to the mean quantum number directly, while a carrier Rabi trace
of a thermal ensemble beats at one frequency per level, so the Fourier
amplitudes estimate the level populations.  Experimental averaging over
lattice-depth spread, magnetic-field spread and slow radial motion uses
deterministic low-discrepancy sampling for reproducibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.stats import norm as _norm
from scipy.stats.qmc import Halton

from .constants import CS_MASS, H_PLANCK, K_B, TWO_PI
from .lattice import TrapSpec


class ThermometryError(ValueError):
    """Raised when a measured signal cannot come from a cooled thermal
    distribution or cannot be inverted reliably."""


class PeakCollisionError(ThermometryError):
    """Raised when carrier beat frequencies are too close to resolve."""


# ---------------------------------------------------------------------------
# thermal ensembles


def temperature_to_nbar(temperature: float, frequency: float) -> float:
    """Bose occupation of one oscillator mode; frequency in Hz."""
    if temperature < 0 or frequency <= 0:
        raise ValueError("temperature must be >= 0 and frequency > 0")
    if temperature == 0:
        return 0.0
    x = H_PLANCK * frequency / (K_B * temperature)
    return 1.0 / math.expm1(x)


def nbar_to_temperature(nbar: float, frequency: float) -> float:
    """Temperature of a thermal state with the given mean occupation."""
    if nbar < 0 or frequency <= 0:
        raise ValueError("nbar must be >= 0 and frequency > 0")
    if nbar == 0:
        return 0.0
    return H_PLANCK * frequency / (K_B * math.log1p(1.0 / nbar))


def thermal_populations(nbar: float, n_max: Optional[int] = None,
                        leak_tol: float = 1e-6) -> np.ndarray:
    """Geometric level populations, truncated and renormalized.

    n_max is raised automatically until the truncated tail is below
    leak_tol; an explicit n_max acts as a lower bound on the size.
    """
    if nbar < 0:
        raise ValueError("nbar must be nonnegative")
    if nbar == 0:
        n = max(1, n_max or 1)
        p = np.zeros(n)
        p[0] = 1.0
        return p
    r = nbar / (1.0 + nbar)
    # tail mass above N-1 levels is r^N
    n_auto = max(1, math.ceil(math.log(leak_tol) / math.log(r)))
    n = max(n_auto, n_max or 1)
    p = (1.0 - r) * r ** np.arange(n)
    return p / p.sum()


@dataclass(frozen=True)
class ThermalEnsemble:
    """Thermal occupation of one well's motional levels."""

    populations: np.ndarray
    nbar: float
    temperature: Optional[float] = None   # K, set when a frequency is known
    frequency: Optional[float] = None     # Hz
    trap: Optional[TrapSpec] = None

    def __post_init__(self):
        p = np.asarray(self.populations, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0):
            raise ValueError("populations must be a nonnegative vector")
        if abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("populations must be normalized to 1e-10")
        object.__setattr__(self, "populations", p)

    @property
    def n_max(self) -> int:
        return self.populations.size - 1

    @classmethod
    def from_nbar(cls, nbar: float, n_max: Optional[int] = None,
                  frequency: Optional[float] = None,
                  trap: Optional[TrapSpec] = None) -> "ThermalEnsemble":
        p = thermal_populations(nbar, n_max)
        t = nbar_to_temperature(nbar, frequency) if frequency else None
        return cls(populations=p, nbar=nbar, temperature=t,
                   frequency=frequency, trap=trap)

    @classmethod
    def from_temperature(cls, temperature: float, frequency: float,
                         n_max: Optional[int] = None,
                         trap: Optional[TrapSpec] = None) -> "ThermalEnsemble":
        nbar = temperature_to_nbar(temperature, frequency)
        p = thermal_populations(nbar, n_max)
        return cls(populations=p, nbar=nbar, temperature=temperature,
                   frequency=frequency, trap=trap)

    def mean_n(self) -> float:
        return float(np.arange(self.populations.size) @ self.populations)


# ---------------------------------------------------------------------------
# sideband-ratio thermometry


@dataclass(frozen=True)
class SidebandThermometry:
    nbar: float
    ground_population: float
    ratio: float


def sideband_thermometry(red_area: float,
                         blue_area: float) -> SidebandThermometry:
    """Mean occupation from the sideband area ratio R = red/blue.

    `red_area` is the area of the n-lowering sideband — the one that
    vanishes for a ground-state ensemble — and `blue_area` the
    n-raising one.  When probing from the upper spin state the lowering
    sideband sits at positive detuning from the carrier.  For a thermal
    distribution R = nbar/(1+nbar) exactly, independent of the coupling
    strengths, because the up/down matrix elements between the same
    level pair are equal in magnitude.
    """
    if blue_area <= 0:
        raise ThermometryError("blue (n-raising) sideband area must be > 0")
    if red_area < 0:
        raise ThermometryError("sideband areas must be nonnegative")
    ratio = red_area / blue_area
    if ratio >= 1:
        raise ThermometryError(
            f"area ratio {ratio:.3f} >= 1 is not a cooled thermal "
            "distribution")
    nbar = ratio / (1.0 - ratio)
    return SidebandThermometry(nbar=nbar, ground_population=1.0 - ratio,
                               ratio=ratio)


# ---------------------------------------------------------------------------
# carrier beat-note thermometry


@dataclass(frozen=True)
class BeatThermometry:
    populations: np.ndarray    # normalized level estimates
    nbar: float
    temperature: Optional[float]   # K, when an axial frequency was given
    frequencies: np.ndarray    # carrier Rabi frequencies used, Hz
    amplitudes: np.ndarray     # extracted tone amplitudes
    residual: float            # weighted rms of the Boltzmann log fit


def beat_thermometry(trace, coupling_matrix,
                     axial_frequency: Optional[float] = None,
                     fit_levels: Optional[int] = None,
                     min_periods: float = 5.0) -> BeatThermometry:
    """Level populations and temperature from a carrier Rabi trace.

    The carrier drive of a thermal ensemble produces a beat of Rabi
    oscillations, one frequency Omega_0 |M[n][n]| per level; the tone
    amplitude at each frequency is proportional to that level's
    population.  A weighted least-squares line through log p_n gives
    the Boltzmann ratio and hence nbar (and T when axial_frequency is
    supplied).

    Parameters
    ----------
    trace : RabiTrace (uniform times + transfer signal).
    coupling_matrix : CouplingMatrix carrying the bare Rabi frequency.
    """
    times = np.asarray(trace.times, dtype=float)
    signal = np.asarray(trace.transfer, dtype=float)
    m_diag = np.abs(np.diagonal(coupling_matrix.elements))
    n_avail = m_diag.size
    n_fit = min(fit_levels or 6, n_avail)
    freqs = coupling_matrix.bare_rabi * m_diag[:n_fit]

    span = times[-1] - times[0]
    resolution = 1.0 / span
    diffs = np.abs(np.subtract.outer(freqs, freqs))
    np.fill_diagonal(diffs, np.inf)
    if diffs.min() < resolution:
        i, j = np.unravel_index(np.argmin(diffs), diffs.shape)
        raise PeakCollisionError(
            f"carrier frequencies for n={i} and n={j} differ by "
            f"{diffs.min():.3g} Hz, below the transform resolution "
            f"{resolution:.3g} Hz; use a different well displacement "
            "to separate the beat notes")
    if freqs.min() * span < min_periods:
        raise ThermometryError(
            f"trace covers {freqs.min() * span:.2f} periods of the "
            f"slowest beat component; need at least {min_periods}")

    from .dynamics import tone_amplitude
    amps = np.array([tone_amplitude(times, signal, f) for f in freqs])

    # transfer = sum_n p_n (1 - cos(2 pi f_n t))/2, so amplitude = p_n/2
    p_raw = np.maximum(2.0 * amps, 0.0)
    if p_raw.sum() <= 0:
        raise ThermometryError("no beat amplitude found at any carrier tone")
    p = p_raw / p_raw.sum()

    # weighted LSQ on log p_n: weights p^2 (log-transformed equal-noise)
    good = p > 1e-12
    n_idx = np.arange(n_fit)[good]
    logp = np.log(p[good])
    w = p[good] ** 2
    if n_idx.size >= 2:
        wx = np.sum(w * n_idx)
        ww = np.sum(w)
        wy = np.sum(w * logp)
        wxx = np.sum(w * n_idx ** 2)
        wxy = np.sum(w * n_idx * logp)
        denom = ww * wxx - wx ** 2
        slope = (ww * wxy - wx * wy) / denom
        intercept = (wy - slope * wx) / ww
        resid = float(np.sqrt(np.sum(w * (logp - slope * n_idx
                                          - intercept) ** 2) / ww))
        r = math.exp(min(slope, -1e-12))
    else:
        r, resid = 0.0, 0.0
    nbar = r / (1.0 - r)
    temp = nbar_to_temperature(nbar, axial_frequency) \
        if (axial_frequency and nbar > 0) else (0.0 if axial_frequency
                                                else None)
    return BeatThermometry(populations=p, nbar=nbar, temperature=temp,
                           frequencies=freqs, amplitudes=amps,
                           residual=resid)


# ---------------------------------------------------------------------------
# inhomogeneous averaging


@dataclass(frozen=True)
class InhomogeneityModel:
    """Gaussian spreads of depth and field plus slow radial motion.

    The radial oscillator is quasi-static: each sample sits at a fixed
    radial position drawn from the 2D thermal distribution and sees the
    local depth U * exp(-2 r^2 / w^2).
    """

    sigma_depth_frac: float = 0.0     # fractional lattice-depth spread
    sigma_field: float = 0.0          # tesla
    radial_temperature: float = 0.0   # K
    radial_frequency: float = 0.0     # Hz (ordinary)
    beam_waist: Optional[float] = None   # m
    samples: int = 64
    atom_mass: float = CS_MASS        # kg, for the radial thermal width

    def __post_init__(self):
        if min(self.sigma_depth_frac, self.sigma_field,
               self.radial_temperature, self.radial_frequency) < 0:
            raise ValueError("spread parameters must be nonnegative")
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if self.radial_active and not self.beam_waist:
            raise ValueError("radial model needs a beam waist")

    @property
    def radial_active(self) -> bool:
        return self.radial_temperature > 0 and self.radial_frequency > 0

    @property
    def radial_sigma(self) -> float:
        """Thermal width of the radial position distribution, m."""
        if not self.radial_active:
            return 0.0
        omega = TWO_PI * self.radial_frequency
        return math.sqrt(K_B * self.radial_temperature
                         / (self.atom_mass * omega ** 2))

    @property
    def is_trivial(self) -> bool:
        return (self.sigma_depth_frac == 0 and self.sigma_field == 0
                and not self.radial_active)


@dataclass(frozen=True)
class SampleSet:
    """Deterministic parameter draws for one averaging run."""

    depth_factor: np.ndarray    # axial depth multiplier, 1 + sigma * g
    b_offset: np.ndarray        # tesla
    radial_factor: np.ndarray   # local relative depth from radial position


def sample_set(model: InhomogeneityModel, seed: int = 0) -> SampleSet:
    """Low-discrepancy (scrambled Halton) draws; reproducible per seed."""
    if model.is_trivial:
        one = np.ones(1)
        return SampleSet(depth_factor=one, b_offset=np.zeros(1),
                         radial_factor=one)
    u = Halton(d=4, scramble=True, seed=seed).random(model.samples)
    # keep the inverse-normal transform away from 0/1
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    g = _norm.ppf(u)
    depth = 1.0 + model.sigma_depth_frac * g[:, 0]
    depth = np.clip(depth, 0.05, None)    # guard against unphysical draws
    b_off = model.sigma_field * g[:, 1]
    if model.radial_active:
        sr = model.radial_sigma
        r2 = (sr * g[:, 2]) ** 2 + (sr * g[:, 3]) ** 2
        radial = np.exp(-2.0 * r2 / model.beam_waist ** 2)
    else:
        radial = np.ones(model.samples)
    return SampleSet(depth_factor=depth, b_offset=b_off,
                     radial_factor=radial)


def inhomogeneous_average(observable: Callable[[float, float, float], object],
                          model: InhomogeneityModel, seed: int = 0
                          ) -> Tuple[np.ndarray, np.ndarray]:
    """Average an observable over the experimental parameter spread.

    observable(depth_factor, b_offset_tesla, radial_factor) must return
    a scalar or array of fixed shape; depth_factor scales the nominal
    axial depth and radial_factor is the additional local depth factor
    from the radial position.  Returns (mean, standard deviation over
    samples).  Evaluations are independent; the reduction is a stable
    two-pass mean/std, so the result does not depend on scheduling.
    """
    s = sample_set(model, seed)
    values = []
    for d, b, r in zip(s.depth_factor, s.b_offset, s.radial_factor):
        try:
            values.append(np.asarray(observable(float(d), float(b),
                                                float(r)), dtype=float))
        except Exception as exc:
            raise RuntimeError(
                f"observable failed at depth_factor={d:.6g}, "
                f"b_offset={b:.6g} T, radial_factor={r:.6g}: {exc}") from exc
    stack = np.stack(values)
    mean = stack.mean(axis=0)
    std = stack.std(axis=0, ddof=1) if stack.shape[0] > 1 \
        else np.zeros_like(mean)
    return mean, std
