"""Shared fixtures: lattice configurations and localized-state pairs."""

from __future__ import annotations

import numpy as np
import pytest

from mwlattice import (
    BlochBasisSpec,
    LatticeConfig,
    SpinState,
    diagonalize,
    localized_states,
)
from mwlattice.lattice import PhysicalParams, recoils_to_joules, well_minimum

DEEP_DEPTH_ER = 832.6
DEEP_THETA = 0.23115676469889823         # 24 nm relative displacement


def make_cfg(depth_er: float, theta: float = 0.0, *, weights=None,
             depth_ratio: float = 1.0, attractive: bool = True,
             params: PhysicalParams | None = None) -> LatticeConfig:
    params = params or PhysicalParams()
    kw = {}
    if weights is not None:
        kw["weights"] = weights
    return LatticeConfig(params=params, theta=theta,
                         depth_plus=recoils_to_joules(depth_er, params),
                         depth_ratio=depth_ratio, attractive=attractive,
                         **kw)


def localized_pair(cfg: LatticeConfig, band_count: int = 8,
                   q_points: int = 16, periods: int = 12,
                   points_per_period: int = 128):
    """Both spins' well states on one shared grid, bound bands only."""
    center = 0.5 * (well_minimum(cfg, SpinState.S0)
                    + well_minimum(cfg, SpinState.S1))
    pair = []
    for spin in (SpinState.S0, SpinState.S1):
        basis = BlochBasisSpec.for_config(cfg, band_count=band_count,
                                          q_points=q_points)
        sol = diagonalize(cfg, spin, basis, check_convergence=False)
        pair.append(localized_states(sol, points_per_period=points_per_period,
                                     periods=periods,
                                     grid_center=center).bound())
    return pair[0], pair[1]


@pytest.fixture(scope="session")
def deep_cfg() -> LatticeConfig:
    return make_cfg(DEEP_DEPTH_ER, DEEP_THETA)


@pytest.fixture(scope="session")
def deep_locs(deep_cfg):
    return localized_pair(deep_cfg)


@pytest.fixture(scope="session")
def deep_aligned_locs():
    """Same depth with zero relative displacement."""
    return localized_pair(make_cfg(DEEP_DEPTH_ER, 0.0))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
