"""Pulsed spin-motion dynamics against exact and generic integrators."""

import math

import numpy as np
import pytest

from mwlattice import (
    BlochBasisSpec,
    PURE_SIGMA_WEIGHTS,
    SpinState,
    ThermalEnsemble,
    ballistic_fit,
    deep_spectrum,
    diagonalize,
    double_well_hamiltonian,
    evolve,
    extract_rabi,
    franck_condon_matrix,
    quantum_walk,
    rabi_trace,
    spin_visibility,
    transfer_population,
)
from mwlattice.dynamics import DriveHamiltonian, Pulse, pulse_for_area

from conftest import DEEP_DEPTH_ER, DEEP_THETA, localized_pair, make_cfg
from oracles import chain_walk_sigma, expm_rectangular, ivp_pulse

H = 6.62607015e-34


# --------------------------------------------------------------------- pulses


def test_pulse_area_conventions():
    # rectangular: Omega_0 * T = 1/2 is a pi pulse
    assert Pulse(1e3, 5e-4).area_pi == pytest.approx(1.0, rel=1e-12)
    g = Pulse(1e3, 6e-3, shape="gaussian", fwhm=2e-3)
    # gaussian envelope integral: fwhm * sqrt(pi/(4 ln 2)), truncated tails
    expected = 2e-3 * math.sqrt(math.pi / (4 * math.log(2.0)))
    assert g.envelope_integral == pytest.approx(expected, rel=1e-3)
    assert g.area_pi == pytest.approx(2 * 1e3 * g.envelope_integral,
                                      rel=1e-12)
    assert g.envelope(3e-3) == pytest.approx(1.0)
    assert g.envelope(3e-3 - 1e-3) == pytest.approx(0.5, rel=1e-9)


def test_pulse_for_area_hits_requested_effective_area():
    p = pulse_for_area(1.0, 0.5, 2e-3)
    # effective area = bare area * |M| = 1.0 pi
    assert p.area_pi * 0.5 == pytest.approx(1.0, rel=1e-9)
    assert p.shape == "gaussian" and p.duration == pytest.approx(12e-3)


def test_pulse_validation():
    with pytest.raises(ValueError):
        Pulse(1e3, -1.0)
    with pytest.raises(ValueError):
        Pulse(1e3, 1e-3, shape="gaussian")      # needs fwhm
    with pytest.raises(ValueError):
        Pulse(1e3, 1e-3, shape="triangle")


# ----------------------------------------------------------- two-level limit


def _two_level_ham():
    return DriveHamiltonian(energies0=np.array([0.0]),
                            energies1=np.array([1.0e6]),
                            coupling=np.array([[1.0 + 0.0j]]),
                            reference=1.0e6)


@pytest.mark.parametrize("delta", [0.0, 7.5e3])
def test_two_level_rabi_matches_analytic(delta):
    ham = _two_level_ham()
    omega = 20e3
    times = np.linspace(0.0, 2.0e-4, 81)
    pulse = Pulse(omega, times[-1], detuning=delta)
    psi = evolve(ham, pulse, ham.basis_state(SpinState.S0, 0), times=times)
    p1 = np.abs(psi[..., 1]) ** 2
    w = math.hypot(omega, delta)
    expected = (omega / w) ** 2 * np.sin(math.pi * w * times) ** 2
    np.testing.assert_allclose(p1, expected, rtol=0, atol=1e-6)


# ------------------------------------------------- oracle-checked propagation


def _driven_system(reference_line=(1, 0), bands=8):
    cfg = make_cfg(DEEP_DEPTH_ER, DEEP_THETA)
    loc0, loc1 = localized_pair(cfg)
    loc0, loc1 = loc0.take(bands), loc1.take(bands)
    cm = franck_condon_matrix(loc0, loc1, bare_rabi=60e3)
    return double_well_hamiltonian(loc0, loc1, cm, reference_line)


def _oracle_parts(ham, pulse):
    diag = np.concatenate([ham.energies0,
                           ham.energies1 - (ham.reference + pulse.detuning)])
    n0 = ham.dims[0]
    dim = sum(ham.dims)
    block = np.zeros((dim, dim), dtype=complex)
    m = ham.coupling * np.exp(1j * pulse.phase)
    block[n0:, :n0] = m
    block[:n0, n0:] = m.conj().T
    return diag, block


def test_rectangular_pulse_matches_matrix_exponential():
    ham = _driven_system()
    pulse = Pulse(60e3, 1.2e-4, detuning=350.0, phase=0.4)
    psi0 = ham.basis_state(SpinState.S1, 1)
    got = evolve(ham, pulse, psi0)
    diag, block = _oracle_parts(ham, pulse)
    want = expm_rectangular(diag, block, pulse.bare_rabi, pulse.duration,
                            psi0)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-10)


def test_shaped_pulse_matches_generic_ode_solver():
    ham = _driven_system(bands=4)
    pulse = Pulse(60e3, 2.5e-4, shape="gaussian", fwhm=8e-5, detuning=-500.0)
    psi0 = ham.basis_state(SpinState.S1, 1)
    got = evolve(ham, pulse, psi0, max_refinements=10)
    diag, block = _oracle_parts(ham, pulse)
    want = ivp_pulse(diag, block, pulse.bare_rabi, pulse.envelope,
                     pulse.duration, psi0)
    # the integrator tolerance is stated for populations; amplitudes may
    # sit a factor of a few above it
    np.testing.assert_allclose(got, want, rtol=0, atol=5e-6)


def test_norm_and_rotating_frame_energy_conserved():
    ham = _driven_system(bands=4)
    psi0 = (ham.basis_state(SpinState.S1, 0)
            + 1j * ham.basis_state(SpinState.S0, 1)) / math.sqrt(2)
    times = np.linspace(0.0, 2.0e-4, 33)
    # constant envelope: the rotating-frame Hamiltonian itself is conserved
    pulse = Pulse(45e3, times[-1], detuning=120.0)
    psi = evolve(ham, pulse, psi0, times=times)
    norms = np.sum(np.abs(psi) ** 2, axis=-1)
    np.testing.assert_allclose(norms, 1.0, rtol=0, atol=1e-8)
    diag, block = _oracle_parts(ham, pulse)
    h_mat = np.diag(diag) + pulse.bare_rabi / 2.0 * block
    energy = np.einsum("ti,ij,tj->t", psi.conj(), h_mat, psi).real
    assert np.abs(energy - energy[0]).max() <= 1e-8 * np.abs(h_mat).max()


def test_gaussian_pulse_norm_conserved():
    ham = _driven_system(bands=4)
    pulse = Pulse(60e3, 2.5e-4, shape="gaussian", fwhm=8e-5)
    times = np.linspace(0.0, 2.5e-4, 11)
    psi = evolve(ham, pulse, ham.basis_state(SpinState.S1, 0), times=times,
                 max_refinements=10)
    np.testing.assert_allclose(np.sum(np.abs(psi) ** 2, axis=-1), 1.0,
                               rtol=0, atol=1e-8)


def test_time_reversal_returns_initial_state():
    ham = _driven_system(bands=4)
    psi0 = ham.basis_state(SpinState.S1, 1)
    # rectangular pulses propagate through an exact eigendecomposition:
    # conjugation inverts them to machine precision
    rect = Pulse(60e3, 1.7e-4)
    back = np.conj(evolve(ham, rect, np.conj(evolve(ham, rect, psi0))))
    fidelity = abs(np.vdot(psi0, back)) ** 2
    assert abs(fidelity - 1.0) < 1e-10
    # a shaped (time-symmetric) pulse goes through the split-step path;
    # the round trip must close to the integrator tolerance
    gauss = Pulse(60e3, 2.0e-4, shape="gaussian", fwhm=7e-5)
    out = evolve(ham, gauss, psi0, population_tol=1e-8, max_refinements=12)
    back = np.conj(evolve(ham, gauss, np.conj(out), population_tol=1e-8,
                          max_refinements=12))
    fidelity = abs(np.vdot(psi0, back)) ** 2
    assert abs(fidelity - 1.0) < 1e-6


def test_evolve_validates_times_and_state_shape():
    ham = _driven_system(bands=2)
    pulse = Pulse(1e3, 1e-4)
    psi0 = ham.basis_state(SpinState.S0, 0)
    with pytest.raises(ValueError):
        evolve(ham, pulse, psi0, times=[5e-5, 1e-5])
    with pytest.raises(ValueError):
        evolve(ham, pulse, psi0, times=[2e-4])
    with pytest.raises(ValueError):
        evolve(ham, pulse, psi0[:-1])


def test_transfer_population_sums_target_block():
    psi = np.array([0.6, 0.0, 0.0, 0.8j], dtype=complex)
    assert transfer_population(psi, 2, SpinState.S1) \
        == pytest.approx(0.64, rel=1e-12)
    assert transfer_population(psi, 2, SpinState.S0) \
        == pytest.approx(0.36, rel=1e-12)


# ------------------------------------------------------- traces & extraction


def test_rabi_trace_starts_at_zero_and_stays_bounded():
    ham = _driven_system(reference_line=(0, 0), bands=4)
    times = np.linspace(0.0, 3e-4, 301)
    trace = rabi_trace(ham, Pulse(20e3, times[-1]), times,
                       (SpinState.S1, 0))
    assert trace.transfer[0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(trace.transfer >= -1e-12)
    assert np.all(trace.transfer <= 1.0 + 1e-12)


def test_weak_drive_rabi_frequency_reproduces_coupling():
    # probe far below the axial frequency: the extracted rate must equal
    # bare Rabi times the line's overlap element to better than 1%
    ham = _driven_system(reference_line=(0, 0))
    omega_ax = 113505.0
    bare = omega_ax / 50.0
    eff = bare * abs(ham.coupling[0, 0])
    scaled = DriveHamiltonian(ham.energies0, ham.energies1, ham.coupling,
                              ham.reference)
    times = np.linspace(0.0, 3.2 / eff, 1200)
    trace = rabi_trace(scaled, Pulse(bare, times[-1]), times,
                       (SpinState.S1, 0))
    got = extract_rabi(trace.times, trace.transfer)
    assert got == pytest.approx(eff, rel=0.01)


def test_extract_rabi_synthetic_tone():
    times = np.linspace(0.0, 2.5e-4, 1501)
    signal = 0.48 * (1 - np.cos(2 * math.pi * 32e3 * times)) \
        * np.exp(-times / 8e-4) + 0.01
    assert extract_rabi(times, signal) == pytest.approx(32e3, abs=300.0)


def test_extract_rabi_picks_dominant_tone():
    times = np.linspace(0.0, 4e-4, 2001)
    signal = 0.55 * np.sin(math.pi * 31e3 * times) ** 2 \
        + 0.2 * np.sin(math.pi * 11e3 * times) ** 2
    assert extract_rabi(times, signal) == pytest.approx(31e3, abs=300.0)


def test_extract_rabi_rejects_bad_traces():
    t = np.linspace(0.0, 4e-5, 200)
    with pytest.raises(ValueError):
        extract_rabi(t, np.sin(math.pi * 32e3 * t) ** 2)
    tn = np.concatenate([t[:100], t[100:] * 1.001])
    with pytest.raises(ValueError):
        extract_rabi(tn, np.sin(math.pi * 32e3 * tn) ** 2)


# ------------------------------------------------------------------ spectrum


def test_spectrum_aligned_wells_show_no_sidebands():
    cfg = make_cfg(DEEP_DEPTH_ER, 0.0)
    pulse = Pulse(1e3, 5e-4)                 # pi pulse on the carrier
    det = np.array([-113505.0, -111000.0, 0.0, 111000.0, 113505.0])
    sp = deep_spectrum(cfg, pulse, det, band_count=6, periods=12)
    assert sp.transfer[2] > 0.99
    assert np.all(sp.transfer[[0, 1, 3, 4]] < 1e-3)


def test_spectrum_line_centers_match_band_differences():
    cfg = make_cfg(DEEP_DEPTH_ER, DEEP_THETA)
    basis = BlochBasisSpec.for_config(cfg, band_count=2, q_points=8)
    c0 = diagonalize(cfg, SpinState.S0, basis).band_centers()
    pulse = Pulse(2e3, 4e-4)
    fourier_width = 1.0 / pulse.duration
    # the |1,0> -> |0,1> line sits at minus the lower-well interval
    w0 = (c0[1] - c0[0]) / H
    for center in (0.0, -w0):
        dets = center + np.linspace(-3e3, 3e3, 121)
        sp = deep_spectrum(cfg, pulse, dets, band_count=8, periods=12)
        peak = dets[int(np.argmax(sp.transfer))]
        assert abs(peak - center) < fourier_width


def test_spectrum_thermal_sideband_asymmetry():
    # weak-probe areas of quantum-removing vs quantum-adding sidebands
    # integrate to nbar/(1+nbar)
    cfg = make_cfg(DEEP_DEPTH_ER, DEEP_THETA)
    te = ThermalEnsemble.from_nbar(1.2)
    pulse = Pulse(500.0, 6e-4)
    cool = np.linspace(106e3, 132e3, 261)
    heat = np.linspace(-128e3, -102e3, 261)
    sc = deep_spectrum(cfg, pulse, cool, ensemble=te, band_count=8,
                       periods=12)
    sh = deep_spectrum(cfg, pulse, heat, ensemble=te, band_count=8,
                       periods=12)
    ratio = np.trapezoid(sc.transfer, cool) / np.trapezoid(sh.transfer, heat)
    assert ratio == pytest.approx(1.2 / 2.2, rel=0.05)


# ---------------------------------------------------------------------- walk


def _walk_cfg():
    return make_cfg(27.415, math.pi / 2, weights=PURE_SIGMA_WEIGHTS,
                    depth_ratio=0.9362, attractive=False)


def test_walk_probability_conserved_and_starts_localized():
    times = np.linspace(0.0, 3e-3, 61)
    w = quantum_walk(_walk_cfg(), 10e3, 48, times, q_points=16)
    np.testing.assert_allclose(w.populations.sum(axis=1), 1.0,
                               rtol=0, atol=1e-8)
    assert w.sigma_x[0] == pytest.approx(0.0, abs=1e-10)
    assert w.p_spin0[0] == pytest.approx(1.0, abs=1e-10)
    assert w.hop_right == pytest.approx(w.hop_left, rel=1e-6)


def test_walk_spread_invariant_under_chain_enlargement():
    times = np.linspace(0.0, 4.2e-3, 127)
    speeds, exponents = {}, {}
    for n in (64, 128):
        w = quantum_walk(_walk_cfg(), 10e3, n, times, q_points=16)
        exponents[n], speeds[n] = ballistic_fit(times, w.sigma_x)
    assert abs(speeds[64] - speeds[128]) / speeds[128] < 1e-3
    assert abs(exponents[64] - exponents[128]) < 1e-3


def test_walk_matches_tight_binding_chain():
    times = np.linspace(0.0, 4.2e-3, 127)
    w = quantum_walk(_walk_cfg(), 10e3, 128, times, q_points=16)
    exponent, speed = ballistic_fit(times, w.sigma_x)
    assert exponent == pytest.approx(1.0, abs=0.05)
    dxs = np.diff(w.node_positions)
    sigma = chain_walk_sigma(w.hop_right, w.hop_left, 128, dxs[0], dxs[1],
                             times)
    _, oracle_speed = ballistic_fit(times, sigma)
    assert speed == pytest.approx(oracle_speed, rel=0.02)
    # the chain reproduces not only the spread but the spin dynamics
    np.testing.assert_allclose(
        sigma, w.sigma_x, rtol=0, atol=1e-6 * abs(w.node_positions).max())


def test_walk_edge_contact_flags_invalid():
    times = np.linspace(0.0, 4.2e-3, 61)
    w = quantum_walk(_walk_cfg(), 10e3, 8, times, q_points=16)
    assert not w.valid
    assert w.edge_max > 1e-4


def test_ballistic_fit_classifies_growth_laws():
    times = np.linspace(0.0, 7e-3, 200)
    exponent, speed = ballistic_fit(times, 0.68341 * times + 3e-9)
    assert exponent == pytest.approx(1.0, abs=1e-4)
    assert speed == pytest.approx(0.68341, rel=1e-4)
    exponent, _ = ballistic_fit(times, 1e-3 * np.sqrt(times + 1e-12))
    assert exponent == pytest.approx(0.5, abs=1e-4)


def test_spin_visibility_tracks_oscillation_amplitude():
    period = 1.4e-3
    times = np.linspace(0.0, 5 * period, 1400)
    p0 = 0.5 + 0.4 * np.cos(2 * math.pi * times / period) \
        * np.exp(-times / 4e-3)
    centers, vis = spin_visibility(times, p0, period)
    assert len(vis) == 5
    assert np.all(np.diff(vis) < 0)
    assert vis[0] == pytest.approx(0.8 * math.exp(-0.5 * period / 4e-3),
                                   rel=0.15)
