"""Franck-Condon couplings between displaced lattice wells.

A microwave photon carries negligible momentum, so driving the spin flip
leaves the motional wavefunction untouched while the potential it lives
in jumps sideways by Delta x.  The coupling between vibrational levels is
the bare Rabi frequency times the overlap of the initial state with the
displaced well's eigenstates,

    Omega_{n,n'} = Omega_0 <n'_tilde | n> ,

the matrix element of the momentum displacement operator.  For harmonic
wells this is the classic displaced-oscillator overlap with parameter
alpha = Delta x / (2 x0), which doubles as the effective Lamb-Dicke
parameter of the microwave drive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .constants import HBAR
from .lattice import LatticeConfig
from .bands import LocalizedStates


class GridMismatchError(ValueError):
    """Raised when the two wells' states do not share a usable grid."""


@dataclass(frozen=True)
class LambDicke:
    """Effective spin-motion coupling strength of the displaced wells."""

    eta: float          # dimensionless, Delta x / (2 x0)
    x0: float           # ground-state width sqrt(hbar / 2 m omega), m
    displacement: float  # m


def effective_lamb_dicke(displacement: float, axial_frequency: float,
                         mass: float) -> LambDicke:
    """Magnitude convention: eta = |Delta x| / (2 x0) >= 0."""
    if axial_frequency <= 0 or mass <= 0:
        raise ValueError("axial frequency and mass must be positive")
    omega = 2.0 * math.pi * axial_frequency
    x0 = math.sqrt(HBAR / (2.0 * mass * omega))
    return LambDicke(eta=abs(displacement) / (2.0 * x0), x0=x0,
                     displacement=displacement)


def ho_overlap(n: int, nprime: int, alpha: float) -> float:
    """Displaced harmonic-oscillator overlap <n'|exp(alpha(a+ - a))|n>.

    Signed value; stable up to n ~ 60 through log-factorials.  alpha may
    be negative, flipping the sign for odd n' - n.
    """
    if n < 0 or nprime < 0:
        raise ValueError("quantum numbers must be nonnegative")
    if alpha == 0.0:
        return 1.0 if n == nprime else 0.0
    sign_flip = 1.0
    if alpha < 0.0:
        alpha = -alpha
        sign_flip = (-1.0) ** abs(nprime - n)
    lo, hi = (n, nprime) if n <= nprime else (nprime, n)
    d = hi - lo
    # <hi|D|lo> for alpha > 0; the reversed element picks up (-1)^d
    log_pref = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1)) \
        + d * math.log(alpha) - alpha ** 2 / 2.0
    val = math.exp(log_pref) * eval_genlaguerre(lo, d, alpha ** 2)
    if nprime < n:
        val *= (-1.0) ** d
    return sign_flip * val


@dataclass(frozen=True)
class CouplingMatrix:
    """Vibrational coupling elements between the two spin manifolds."""

    elements: np.ndarray      # (n1, n0) complex, M[n'][n] = <1,n'|0,n>
    bare_rabi: float          # Omega_0, Hz
    delta_x: float            # well separation used, m

    @property
    def shape(self):
        return self.elements.shape

    def rabi(self, n: int, nprime: int) -> float:
        """Coupled Rabi frequency Omega_0 |M[n'][n]|, Hz."""
        return self.bare_rabi * float(np.abs(self.elements[nprime, n]))


def rabi_frequency(cm: CouplingMatrix, n: int, nprime: int) -> float:
    return cm.rabi(n, nprime)


def franck_condon_matrix(loc0: LocalizedStates, loc1: LocalizedStates,
                         bare_rabi: float = 1.0,
                         edge_tol: float = 1e-6) -> CouplingMatrix:
    """Overlap matrix M[n'][n] = sum conj(psi1_n') psi0_n dz.

    Both states must live on the same grid; wavefunctions must have
    decayed below edge_tol (relative to their peak) at the boundary so
    the finite window does not truncate the physics.
    """
    if loc0.positions.shape != loc1.positions.shape or not np.allclose(
            loc0.positions, loc1.positions,
            atol=1e-9 * loc0.grid_step, rtol=0):
        raise GridMismatchError("localized states must share the grid")
    worst = max(loc0.edge_amplitude(), loc1.edge_amplitude())
    if worst > edge_tol:
        raise GridMismatchError(
            f"edge amplitude {worst:.2e} above {edge_tol:.0e}; "
            "enlarge the real-space window")
    dz = loc0.grid_step
    elements = np.einsum("az,bz->ab", np.conj(loc1.psi), loc0.psi) * dz
    return CouplingMatrix(elements=elements, bare_rabi=float(bare_rabi),
                          delta_x=loc1.center - loc0.center)
