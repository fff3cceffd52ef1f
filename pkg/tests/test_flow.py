"""
Test suite for the flow module.

Tests for the proximal step, the flow driver, extinction detection and the
separable profile solver.
"""

from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffde_lab.errors import InsufficientData
from ffde_lab.flow import (
    NORM_COLUMNS,
    SolverConfig,
    Trajectory,
    detect_extinction,
    proximal_step,
    run_flow,
    scalar_closed_form,
    solve_separable_profile,
)
from ffde_lab.mesh import make_grid
from ffde_lab.norms import Field
from ffde_lab.operators import DiscreteOperator, build_cfl, build_local_laplacian, build_rfl, build_sfl

SCALAR_OP = build_local_laplacian(make_grid(1, 1)).normalized()


def _march(op: DiscreteOperator, u0: Field, m: float, dt: float, t_end: float) -> Field:
    cfg = SolverConfig(dt_init=dt)
    u = u0
    for _ in range(round(t_end / dt)):
        u = proximal_step(op, u, m, dt, cfg)
    return u


class TestProximalStep:
    """Test cases for one backward-Euler step."""

    def test_zero_input_stays_zero(self, local_op: DiscreteOperator) -> None:
        w = proximal_step(local_op, Field.zeros(local_op.grid), 0.5, 1e-3, SolverConfig())

        assert w.is_zero()

    def test_step_satisfies_its_equation(self, rfl_op: DiscreteOperator) -> None:
        """Test w + dt A w^m = u at the returned state."""
        # ARRANGE
        u = rfl_op.spectral.phi1
        m, dt = 0.5, 1e-2

        # ACT
        w = proximal_step(rfl_op, u, m, dt, SolverConfig())

        # ASSERT
        residual = w.values + dt * rfl_op.apply(w.values**m) - u.values
        assert np.abs(residual).max() <= 1e-10 * (1.0 + np.abs(u.values).max())
        assert np.all(w.values >= 0.0)

    @given(u0=st.floats(min_value=0.1, max_value=10.0), m=st.floats(min_value=0.1, max_value=0.9))
    @settings(max_examples=50, deadline=None)
    def test_scalar_step_decreases(self, u0: float, m: float) -> None:
        u = Field(np.array([u0]), SCALAR_OP.grid)

        w = proximal_step(SCALAR_OP, u, m, 1e-2, SolverConfig())

        assert 0.0 <= w.values[0] < u0
        assert w.values[0] + 1e-2 * w.values[0] ** m == pytest.approx(u0, rel=1e-10)

    def test_tiny_state_still_moves(self, local_op: DiscreteOperator) -> None:
        """Test that a state of amplitude 1e-14 is stepped, not returned as is."""
        # ARRANGE: dt A u^m is far below 1e-12 here but dominates the step
        phi = local_op.spectral.phi1.values
        u = Field(1e-14 * phi / phi.max(), local_op.grid)
        m, dt = 0.8, 1e-3

        # ACT
        w = proximal_step(local_op, u, m, dt, SolverConfig())

        # ASSERT
        assert w.values.max() < 0.5 * u.values.max()
        residual = w.values + dt * local_op.apply(w.values**m) - u.values
        assert np.abs(residual).max() <= 1e-9 * u.values.max()
        assert np.all(w.values >= 0.0)


    def test_first_order_convergence(self) -> None:
        """Test that halving dt halves the error against the exact scalar solution."""
        # ARRANGE: u' = -u^(1/2), u(0) = 1, exact u(1) = 1/4
        u0 = Field(np.ones(1), SCALAR_OP.grid)
        exact = float(scalar_closed_form(np.array([1.0]), 1.0, 1.0, 0.5)[0])

        # ACT
        coarse = abs(_march(SCALAR_OP, u0, 0.5, 1e-2, 1.0).values[0] - exact)
        fine = abs(_march(SCALAR_OP, u0, 0.5, 5e-3, 1.0).values[0] - exact)

        # ASSERT
        assert exact == pytest.approx(0.25)
        assert 1.7 < coarse / fine < 2.3


class TestScalarClosedForm:
    """Test cases for the exact scalar solution."""

    def test_vanishes_after_extinction(self) -> None:
        values = scalar_closed_form(np.array([0.0, 1.0, 2.0, 3.0]), 1.0, 1.0, 0.5)

        np.testing.assert_allclose(values, [1.0, 0.25, 0.0, 0.0])


class TestRunFlow:
    """Test cases for the flow driver."""

    def test_scalar_extinction_time(self) -> None:
        """Test T = u0^(1-m) / ((1-m) a) = 2 for the scalar problem."""
        # ARRANGE
        u0 = Field(np.ones(1), SCALAR_OP.grid)
        cfg = SolverConfig(dt_init=1e-4, t_max=3.0)

        # ACT
        traj = run_flow(SCALAR_OP, u0, 0.5, cfg)

        # ASSERT
        assert traj.extinction is not None
        assert traj.extinction.t_fit is not None
        assert 1.98 <= traj.extinction.t_fit <= 2.02
        assert traj.extinction.t_hat == pytest.approx(2.0, abs=0.05)

    def test_rejects_m_outside_unit_interval(self, local_op: DiscreteOperator) -> None:
        with pytest.raises(ValueError):
            run_flow(local_op, local_op.spectral.phi1, 1.0, SolverConfig())

    def test_signed_input_runs_absolute_value(
        self, local_op: DiscreteOperator, fast_solver: SolverConfig
    ) -> None:
        # ARRANGE: Sign-changing datum
        x = local_op.grid.nodes[:, 0]
        u0 = Field(np.sin(2.0 * np.pi * x), local_op.grid)
        cfg = fast_solver.model_copy(update={"t_max": 0.01})

        # ACT
        traj = run_flow(local_op, u0, 0.5, cfg)

        # ASSERT
        assert traj.signed_input is True
        np.testing.assert_allclose(traj.u0.values, np.abs(u0.values))
        assert all(np.all(f.values >= 0.0) for f in traj.snapshots)

    def test_zero_datum_is_extinct_at_once(self, local_op: DiscreteOperator) -> None:
        traj = run_flow(local_op, Field.zeros(local_op.grid), 0.5, SolverConfig())

        assert traj.extinct is True
        assert traj.extinction is not None
        assert traj.extinction.t_hat == 0.0
        assert math.isnan(traj.norm_series["Q"][0])

    def test_no_extinction_before_t_max(
        self, local_op: DiscreteOperator, fast_solver: SolverConfig
    ) -> None:
        cfg = fast_solver.model_copy(update={"t_max": 0.01})

        traj = run_flow(local_op, local_op.spectral.phi1, 0.5, cfg)

        assert traj.extinct is False
        assert traj.times[-1] == pytest.approx(0.01, abs=fast_solver.dt_init * 1.01)
        with pytest.raises(InsufficientData):
            detect_extinction(traj)

    def test_audit_is_clean(self, local_op: DiscreteOperator, fast_solver: SolverConfig) -> None:
        """Test the proximal energy inequality and norm decay on every step."""
        cfg = fast_solver.model_copy(update={"t_max": 0.05, "audit_energy": True})

        traj = run_flow(local_op, local_op.spectral.phi1, 0.5, cfg)

        assert traj.audit is not None
        assert traj.audit.steps > 0
        assert traj.audit.clean

    def test_snapshot_every(self, local_op: DiscreteOperator) -> None:
        cfg = SolverConfig(dt_init=1e-3, t_max=0.01, time_probes=2, level_probes=0, snapshot_every=2)

        traj = run_flow(local_op, local_op.spectral.phi1, 0.5, cfg)

        for t in (0.002, 0.004, 0.006, 0.008):
            assert np.any(np.isclose(traj.times, t))


class TestTrajectoryShape:
    """Test cases for the recorded trajectory."""

    def test_times_strictly_increase(self, eigen_run: Trajectory) -> None:
        assert eigen_run.times[0] == 0.0
        assert np.all(np.diff(eigen_run.times) > 0.0)

    def test_norm_table_aligned(self, eigen_run: Trajectory) -> None:
        for column in (*NORM_COLUMNS, "norm_Hum"):
            assert len(eigen_run.norm_series[column]) == len(eigen_run.snapshots)

    def test_last_snapshot_is_extinct(self, eigen_run: Trajectory) -> None:
        assert eigen_run.extinct is True
        assert np.abs(eigen_run.snapshots[-1].values).max() < eigen_run.extinction_threshold

    def test_linf_nonincreasing(self, eigen_run: Trajectory) -> None:
        linf = eigen_run.trace.linf

        assert np.all(np.diff(linf) <= 1e-12 * linf[0])


class TestSeparableProfile:
    """Test cases for the separable profile and its exact extinction time."""

    def test_profile_solves_its_equation(self, rfl_op: DiscreteOperator) -> None:
        m = 0.5

        w = solve_separable_profile(rfl_op, m)

        residual = rfl_op.apply(w.values**m) - w.values / (1.0 - m)
        assert np.abs(residual).max() <= 1e-8 * np.abs(w.values).max()
        assert np.all(w.values >= 0.0)
        assert not w.is_zero()

    def test_extinction_time_is_one(self, separable_run: Trajectory) -> None:
        assert separable_run.extinction is not None
        assert separable_run.extinction.t_fit is not None
        assert separable_run.extinction.t_fit == pytest.approx(1.0, abs=0.01)

    def test_profile_rejects_bad_m(self, rfl_op: DiscreteOperator) -> None:
        with pytest.raises(ValueError):
            solve_separable_profile(rfl_op, 1.5)

    @pytest.mark.slow
    @pytest.mark.parametrize("m", [0.5, 0.8])
    @pytest.mark.parametrize(
        ("builder", "s"),
        [(build_local_laplacian, None), (build_sfl, 0.5), (build_rfl, 0.75), (build_cfl, 0.75)],
        ids=["local", "sfl", "rfl", "cfl"],
    )
    def test_extinction_detected_for_every_kind(
        self, builder: Callable[..., DiscreteOperator], s: float | None, m: float
    ) -> None:
        """Test that a separable datum on n = 128 reaches the threshold near T = 1."""
        # ARRANGE
        grid = make_grid(1, 128)
        op = builder(grid) if s is None else builder(grid, s)
        profile = solve_separable_profile(op, m)

        # ACT
        traj = run_flow(op, profile, m, SolverConfig(dt_init=1e-3, t_max=3.0))

        # ASSERT
        assert traj.extinction is not None
        assert traj.extinction.t_fit is not None
        assert traj.extinction.t_fit == pytest.approx(1.0, abs=0.02)
        # u ~ (1 - t)^(1/(1-m)) reaches 1e-10 before T, by 1e-2 for m = 0.8
        assert 0.95 <= traj.extinction.t_hat <= 1.02
        assert traj.extinct is True
        assert traj.snapshots[-1].values.max() < traj.extinction_threshold
