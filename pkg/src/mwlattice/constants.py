"""Physical constants (SI, CODATA 2018) and caesium reference values."""

import math

# fundamental
HBAR = 1.054571817e-34      # J s
H_PLANCK = 6.62607015e-34   # J s
K_B = 1.380649e-23          # J / K
MU_B = 9.2740100783e-24     # J / T
ATOMIC_MASS = 1.66053906660e-27  # kg

# caesium-133
CS_MASS = 132.905451961 * ATOMIC_MASS              # kg
CS_GROUND_HYPERFINE_HZ = 9_192_631_770.0           # exact, SI second
CS_D2_WAVELENGTH = 852.34727582e-9                 # m

# default lattice wavelength: |F=4,mF=4> couples to a single circular
# component there, which is what makes the spin-dependent shift work
DEFAULT_WAVELENGTH = 865.9e-9                      # m

# Stretched-state Zeeman slope for |F=3,mF=3> -> |F=4,mF=4> with the
# ideal Lande factors gF(4) = +1/4, gF(3) = -1/4 (nuclear moment and
# the g_J - 2 correction neglected, both < 0.2 %):
#   d(nu)/dB = (4*gF4 - 3*gF3) * mu_B / h = 1.75 mu_B / h
ZEEMAN_SLOPE_HZ_PER_T = 1.75 * MU_B / H_PLANCK     # ~ 2.449 MHz / G

TWO_PI = 2.0 * math.pi
