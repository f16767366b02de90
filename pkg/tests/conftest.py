"""Shared fixtures: small grids and a few flow stores reused across modules.

Session-scoped stores keep the suite fast; tests must not mutate them.
"""
import numpy as np
import pytest

from ymflow import flow, gauge
from ymflow.lattice import Grid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid2():
    return Grid(2, 16, 2.0)


@pytest.fixture(scope="session")
def identity_store():
    """Localized abelian packet, n=2: the energy-identity workhorse.

    m=2 single-generator data, bump envelope well inside the cutoff
    plateau, 64 uniform snapshots to t_end = 0.012.
    """
    grid = Grid(2, 32, 2.0)
    gen = np.array([[0.0, -1.0], [1.0, 0.0]])
    conn = gauge.abelian_mode(grid, (1, 0), 0.1, (0.0, 1.0),
                              generator=gen, envelope=(0.05, 0.2),
                              center=(1.0, 1.0))
    return flow.run(conn, t_end=0.012, cadence=0.012 / 64)


@pytest.fixture(scope="session")
def mode_store():
    """Global (unenveloped) abelian mode, n=2, exact heat-flow decay."""
    grid = Grid(2, 16, 1.0)
    conn = gauge.abelian_mode(grid, (1, 0), 0.05, (0.0, 1.0))
    return flow.run(conn, t_end=0.2, cadence=0.2 / 32)


@pytest.fixture(scope="session")
def mode_store_l2():
    """Global abelian mode on the L=2 torus; wrap tails stay ~e^{-20} so
    closed-form Gaussian-weighted integrals hold to oracle accuracy."""
    grid = Grid(2, 32, 2.0)
    conn = gauge.abelian_mode(grid, (1, 0), 0.05, (0.0, 1.0))
    return flow.run(conn, t_end=0.2, cadence=0.2 / 32)


@pytest.fixture(scope="session")
def instanton_store():
    """Static 't Hooft-ansatz data on a coarse 4-d grid (two equal stamps)."""
    grid = Grid(4, 12, 1.0)
    conn = gauge.thooft_connection(grid, rho=0.125, truncate=(0.3, 0.45))
    store = flow.SnapshotStore(grid, conn.m)
    store.append(0.0, conn)
    store.append(0.05, conn)
    return store
