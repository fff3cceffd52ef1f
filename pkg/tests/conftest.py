"""
Shared test fixtures and configuration.

Operators are built on small grids so the dense linear algebra stays fast.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from ffde_lab.flow import SolverConfig, Trajectory, run_flow, solve_separable_profile
from ffde_lab.mesh import Grid, make_grid
from ffde_lab.operators import (
    DiscreteOperator,
    build_cfl,
    build_local_laplacian,
    build_rfl,
    build_sfl,
)
from ffde_lab.settings import Settings


@pytest.fixture
def test_settings(tmp_path: Path) -> Settings:
    """Provide settings that write into a temporary directory."""
    return Settings(output_root=tmp_path / "runs", seed=None)


@pytest.fixture
def grid_1d() -> Grid:
    return make_grid(1, 24)


@pytest.fixture
def local_op(grid_1d: Grid) -> DiscreteOperator:
    return build_local_laplacian(grid_1d)


@pytest.fixture
def sfl_op(grid_1d: Grid) -> DiscreteOperator:
    return build_sfl(grid_1d, 0.5)


@pytest.fixture
def rfl_op(grid_1d: Grid) -> DiscreteOperator:
    return build_rfl(grid_1d, 0.75)


@pytest.fixture
def cfl_op(grid_1d: Grid) -> DiscreteOperator:
    return build_cfl(grid_1d, 0.75)


@pytest.fixture
def fast_solver() -> SolverConfig:
    """Fixed small steps; enough for extinction near t = 1 on the small grids."""
    return SolverConfig(dt_init=2e-4, t_max=3.0, time_probes=20, level_probes=20)


@pytest.fixture(scope="session")
def separable_run() -> Trajectory:
    """Flow from the separable datum with extinction time T = 1 (RFL s = 0.75, m = 0.5)."""
    op = build_rfl(make_grid(1, 24), 0.75)
    profile = solve_separable_profile(op, 0.5)
    return run_flow(op, profile, 0.5, SolverConfig(dt_init=1e-4, t_max=3.0))


@pytest.fixture(scope="session")
def eigen_run() -> Trajectory:
    """Flow from Phi_1 with m = 0.6 on the same operator family."""
    op = build_rfl(make_grid(1, 24), 0.75)
    return run_flow(op, op.spectral.phi1, 0.6, SolverConfig(dt_init=2e-4, t_max=3.0))
