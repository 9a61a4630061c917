"""Microwave-controlled atomic motion in state-dependent optical lattices.

Simulation library for a one-dimensional lin-angle-lin optical lattice
whose two standing-wave components trap the two clock states of an
alkali atom in mutually displaceable potentials.  The package computes
band structure and localized well states, Franck-Condon couplings of
microwave transitions between the displaced wells, coherent spin-motion
dynamics (Rabi flopping, spectra, quantum-walk transport), thermal
ensembles and thermometry, and microwave sideband cooling.
"""

__version__ = "0.1.0"

from .constants import (
    CS_D2_WAVELENGTH,
    CS_GROUND_HYPERFINE_HZ,
    CS_MASS,
    H_PLANCK,
    HBAR,
    K_B,
)
from .lattice import (
    DEFAULT_WEIGHTS,
    PURE_SIGMA_WEIGHTS,
    LatticeConfig,
    PhysicalParams,
    SpinState,
    displacement,
    potential_fourier,
    state_potential,
    theta_for_displacement,
    well_depth,
    well_minimum,
)
from .bands import (
    BlochBasisSpec,
    ConvergenceError,
    EigenSolution,
    LocalizedStates,
    bound_state_count,
    diagonalize,
    localized_states,
    recommended_band_count,
)
from .coupling import (
    CouplingMatrix,
    GridMismatchError,
    LambDicke,
    effective_lamb_dicke,
    franck_condon_matrix,
    ho_overlap,
)
from .dynamics import (
    DriveHamiltonian,
    Pulse,
    RabiTrace,
    SpectrumResult,
    WalkResult,
    ballistic_fit,
    bloch_drive_hamiltonian,
    bloch_spectrum,
    deep_spectrum,
    double_well_hamiltonian,
    evolve,
    extract_rabi,
    pulse_for_area,
    quantum_walk,
    rabi_trace,
    spin_visibility,
    transfer_population,
)
from .ensembles import (
    BeatThermometry,
    InhomogeneityModel,
    PeakCollisionError,
    SidebandThermometry,
    ThermalEnsemble,
    ThermometryError,
    beat_thermometry,
    inhomogeneous_average,
    nbar_to_temperature,
    sideband_thermometry,
    temperature_to_nbar,
    thermal_populations,
)
from .cooling import (
    CoolingParams,
    CoolingResult,
    TruncationError,
    cool,
    optical_lamb_dicke,
    redistribution_matrix,
)
from .config import ConfigError

__all__ = [
    "__version__",
    "CS_D2_WAVELENGTH", "CS_GROUND_HYPERFINE_HZ", "CS_MASS",
    "H_PLANCK", "HBAR", "K_B",
    "DEFAULT_WEIGHTS", "PURE_SIGMA_WEIGHTS", "LatticeConfig",
    "PhysicalParams", "SpinState", "displacement", "potential_fourier",
    "state_potential", "theta_for_displacement", "well_depth",
    "well_minimum",
    "BlochBasisSpec", "ConvergenceError", "EigenSolution",
    "LocalizedStates", "bound_state_count", "diagonalize",
    "localized_states", "recommended_band_count",
    "CouplingMatrix", "GridMismatchError", "LambDicke",
    "effective_lamb_dicke", "franck_condon_matrix", "ho_overlap",
    "DriveHamiltonian", "Pulse", "RabiTrace", "SpectrumResult",
    "WalkResult", "ballistic_fit", "bloch_drive_hamiltonian",
    "bloch_spectrum", "deep_spectrum", "double_well_hamiltonian",
    "evolve", "extract_rabi", "pulse_for_area", "quantum_walk",
    "rabi_trace", "spin_visibility", "transfer_population",
    "BeatThermometry", "InhomogeneityModel", "PeakCollisionError",
    "SidebandThermometry", "ThermalEnsemble", "ThermometryError",
    "beat_thermometry", "inhomogeneous_average", "nbar_to_temperature",
    "sideband_thermometry", "temperature_to_nbar", "thermal_populations",
    "CoolingParams", "CoolingResult", "TruncationError", "cool",
    "optical_lamb_dicke", "redistribution_matrix",
    "ConfigError",
]
