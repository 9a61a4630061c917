"""Repump redistribution and the sideband-cooling master equation."""

import numpy as np
import pytest

from mwlattice import (
    CoolingParams,
    ThermalEnsemble,
    TruncationError,
    cool,
    franck_condon_matrix,
    redistribution_matrix,
    theta_for_displacement,
)
from mwlattice.cooling import optical_lamb_dicke

import oracles
from conftest import DEEP_DEPTH_ER, DEEP_THETA, localized_pair, make_cfg


@pytest.fixture(scope="module")
def aligned_cfg():
    return make_cfg(DEEP_DEPTH_ER, 0.0)


@pytest.fixture(scope="module")
def aligned_pair(aligned_cfg):
    return localized_pair(aligned_cfg, band_count=14)


@pytest.fixture(scope="module")
def displaced_pair():
    return localized_pair(make_cfg(DEEP_DEPTH_ER, DEEP_THETA), band_count=14)


@pytest.fixture(scope="module")
def default_cool():
    cfg = make_cfg(DEEP_DEPTH_ER, DEEP_THETA)
    return cool(cfg, 1.2, CoolingParams())


# ------------------------------------------------------- redistribution q


def test_redistribution_identity_when_aligned_and_recoil_free(aligned_pair):
    l0, l1 = aligned_pair
    q = redistribution_matrix(l0.take(8), l1.take(8), 0.0, emission="none")
    np.testing.assert_allclose(q, np.eye(8), rtol=0, atol=1e-12)


def test_redistribution_recoil_survival_perturbative(aligned_pair):
    # a single absorption kick of size eta leaves |<n|exp(i eta u)|n>|^2
    # ~= 1 - (2n+1) eta^2 of the population in place
    l0, l1 = aligned_pair
    eta = 0.05
    q = redistribution_matrix(l0.take(4), l1, eta, emission="none")
    np.testing.assert_allclose(q.sum(axis=0), 1.0, rtol=0, atol=1e-9)
    survival = np.array([q[n, n] for n in range(4)])
    predicted = 1 - (2 * np.arange(4) + 1) * eta ** 2
    np.testing.assert_allclose(survival, predicted, rtol=0, atol=1.5e-3)
    assert np.all(np.diff(survival) < 0)


def test_redistribution_displacement_only_matches_overlap(displaced_pair):
    l0, l1 = displaced_pair
    q = redistribution_matrix(l0.take(4), l1, 0.0, emission="none")
    m2 = np.abs(franck_condon_matrix(l0.take(4), l1).elements) ** 2
    np.testing.assert_allclose(q, m2 / m2.sum(axis=0), rtol=0, atol=1e-12)


def test_redistribution_columns_normalized_with_emission(aligned_pair,
                                                         aligned_cfg):
    l0, l1 = aligned_pair
    q = redistribution_matrix(l0.take(6), l1, optical_lamb_dicke(aligned_cfg))
    assert q.shape == (14, 6)
    np.testing.assert_allclose(q.sum(axis=0), 1.0, rtol=0, atol=1e-9)
    assert np.all(q >= -1e-15)


def test_redistribution_truncation_guard(aligned_pair):
    l0, l1 = aligned_pair
    with pytest.raises(TruncationError):
        redistribution_matrix(l0.take(8), l1.take(8), 0.05, emission="none")


def test_heating_grows_with_displacement(displaced_pair):
    cfg0 = make_cfg(DEEP_DEPTH_ER, 0.0)
    l0, l1 = displaced_pair
    q24 = redistribution_matrix(l0.take(4), l1, 0.0, emission="none")
    theta40 = theta_for_displacement(cfg0, 40e-9)
    l0w, l1w = localized_pair(make_cfg(DEEP_DEPTH_ER, theta40),
                              band_count=14)
    q40 = redistribution_matrix(l0w.take(4), l1w, 0.0, emission="none")
    assert 1 - q40[0, 0] > 1 - q24[0, 0] > 0.1


# --------------------------------------------------------- cooling runs


def test_default_cooling_reaches_documented_operating_point(default_cool):
    res = default_cool
    assert res.nbar[0] == pytest.approx(1.2, abs=0.01)
    assert 0.02 < res.steady_nbar < 0.06
    assert res.final_nbar < 0.05
    assert res.ground_population[-1] >= 0.95
    assert np.all(np.diff(res.nbar) <= 1e-6)
    assert res.times[0] == 0.0 and res.times[-1] == pytest.approx(0.02)
    assert res.n_levels == (8, 14)
    assert res.populations.shape == (121, 22)
    sums = res.populations.sum(axis=1)
    np.testing.assert_allclose(sums, 1.0, rtol=0, atol=1e-8)


def test_cooling_floor_identity(default_cool):
    # the single-cycle heating h fixes the detailed-balance floor h/(1-h)
    res = default_cool
    h = res.heating_per_cycle
    assert res.floor_estimate == pytest.approx(h / (1 - h), rel=1e-9)
    assert 0.015 < res.floor_estimate < 0.04
    # the full master equation settles close to, but above, the floor
    assert res.steady_nbar > res.floor_estimate
    assert res.steady_nbar == pytest.approx(res.floor_estimate, rel=0.25)


def test_cool_accepts_thermal_ensemble(default_cool):
    cfg = make_cfg(DEEP_DEPTH_ER, DEEP_THETA)
    te = ThermalEnsemble.from_nbar(1.2, frequency=110e3)
    res = cool(cfg, te, CoolingParams())
    assert res.steady_nbar == pytest.approx(default_cool.steady_nbar,
                                            rel=1e-9)
    assert res.nbar[0] == pytest.approx(default_cool.nbar[0], rel=1e-9)


def test_displaced_repump_defeats_cooling(default_cool):
    # repumping through the displaced wells redistributes heavily: the
    # floor explodes and population leaks into levels the sideband drive
    # never addresses, so the steady state stays hot.  This is why the
    # optical cycle has to happen with the wells aligned.
    cfg = make_cfg(DEEP_DEPTH_ER, DEEP_THETA)
    sizes = dict(n_levels=4, buffer_levels=10)
    res = cool(cfg, 0.5, CoolingParams(repump_displaced=True, **sizes))
    ref = cool(cfg, 0.5, CoolingParams(**sizes))
    assert ref.floor_estimate == pytest.approx(default_cool.floor_estimate,
                                               rel=1e-6)
    assert res.floor_estimate > 10 * ref.floor_estimate
    assert res.steady_nbar > 10 * ref.steady_nbar


def test_displaced_repump_overflows_default_buffer():
    # at the default basis sizes the displaced-well redistribution loses
    # more than the allowed defect; the guard must surface, not silently
    # renormalize
    cfg = make_cfg(DEEP_DEPTH_ER, DEEP_THETA)
    with pytest.raises(TruncationError):
        cool(cfg, 1.2, CoolingParams(repump_displaced=True))


def test_steady_state_matches_rate_model_oracles(aligned_pair, aligned_cfg,
                                                 default_cool):
    # three independent routes to the cooling limit must agree:
    #   (a) Perron vector of the removal+repump cycle chain,
    #   (b) brute-force Lindblad integration of the ideal-removal model,
    #   (c) the package's driven master equation.
    l0, l1 = aligned_pair
    eta = optical_lamb_dicke(aligned_cfg)
    q_full = redistribution_matrix(l0.take(10), l1, eta,
                                   defect_tol=np.inf)
    q = q_full[:10, :10]
    q = q / q.sum(axis=0)

    nbar_chain = oracles.cycle_chain_steady_nbar(q)
    h = 1 - q[0, 0]
    assert nbar_chain == pytest.approx(h / (1 - h), rel=0.05)

    jumps, n_of_index = oracles.ideal_removal_jumps(
        q, removal_rate=3e4, repump_rate=2e5)
    n = 10
    rho0 = np.zeros((2 * n, 2 * n), dtype=complex)
    from mwlattice import thermal_populations
    p = thermal_populations(1.2, n_max=n)[:n]
    p = p / p.sum()
    rho0[range(n, 2 * n), range(n, 2 * n)] = p
    nbar_lindblad = oracles.lindblad_steady_nbar(
        np.zeros((2 * n, 2 * n)), jumps, rho0, 0.02, n_of_index)
    assert nbar_lindblad == pytest.approx(nbar_chain, rel=0.2)

    assert default_cool.steady_nbar == pytest.approx(nbar_chain, rel=0.2)
