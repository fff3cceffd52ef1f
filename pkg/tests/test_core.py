"""
Tests for the experiment service.

These run small flows end to end into temporary run directories, then load,
verify and sweep them.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from ffde_lab.constants import critical_exponents
from ffde_lab.core import (
    ExperimentService,
    RefinementRow,
    SweepCell,
    SweepResult,
    VerifyResult,
    cell_config,
    format_exponent_table,
    format_extinction_line,
    format_operator_record,
    format_sweep_summary,
    format_verify_summary,
    get_verdict_display,
    refinement_rows,
    report_rows,
)
from ffde_lab.errors import OperatorConstructionError, StorageFormatError
from ffde_lab.flow import NORM_COLUMNS, SolverConfig, run_flow
from ffde_lab.mesh import make_grid
from ffde_lab.operators import OperatorKind, build_local_laplacian
from ffde_lab.settings import CheckConfig, DatumKind, ExperimentConfig, Settings, SweepPlan
from ffde_lab.storage import (
    DRIFT_HEADER,
    MANIFEST_FILE,
    PARTIAL_MARKER,
    PHASE_HEADER,
    SUMMARY_HEADER,
    TRAJECTORY_FILE,
    is_complete,
    read_json,
    write_field,
    write_json,
)
from ffde_lab.verify import InequalityReport, Record, Verdict, smoothing_drift


@pytest.fixture
def service(test_settings: Settings) -> ExperimentService:
    return ExperimentService(test_settings)


@pytest.fixture
def small_config() -> ExperimentConfig:
    """Local Laplacian on 16 nodes from Phi_1; extinguishes well before t = 1."""
    return ExperimentConfig().with_overrides(kind="local", s=1.0, n=16, m=0.5, dt=1e-3, t_max=1.0)


class TestBuildOperator:
    """Test operator construction through the service."""

    def test_single_node_is_scalar(self, service: ExperimentService) -> None:
        config = ExperimentConfig().with_overrides(kind="local", s=1.0, n=1)

        op = service.build_operator(config)

        assert op.matrix.shape == (1, 1)
        assert op.matrix[0, 0] == pytest.approx(1.0)

    def test_normalize_lambda1(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        op = service.build_operator(small_config.with_overrides(normalize=True))

        assert op.spectral.lambda1 == pytest.approx(1.0)

    def test_max_nodes(self, tmp_path: Path, small_config: ExperimentConfig) -> None:
        service = ExperimentService(Settings(output_root=tmp_path, max_nodes=8))

        with pytest.raises(OperatorConstructionError, match="max_nodes"):
            service.build_operator(small_config)

    def test_two_dimensional_kernels_follow_settings(self, tmp_path: Path) -> None:
        config = ExperimentConfig().with_overrides(kind="rfl", s=0.5, dim=2, n=4)

        with pytest.raises(OperatorConstructionError):
            ExperimentService(Settings(output_root=tmp_path, enable_2d_kernels=False)).build_operator(config)
        op = ExperimentService(Settings(output_root=tmp_path, enable_2d_kernels=True)).build_operator(config)

        assert op.size == 16


class TestDescribeOperator:
    """Test the operator record."""

    def test_record_keys(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        # ACT
        summary = service.describe_operator(small_config, starts=2)

        # ASSERT: N = 1 < 32 nodes, no fit and no Sobolev constant
        record = summary.record
        assert record["kind"] == "local"
        assert record["gamma"] == 1.0
        assert record["n"] == 16
        assert record["gamma_hat"] is None
        assert record["sobolev_S"] is None
        assert record["offdiag_nonpositive"] is True
        assert record["c0_hat"] > 0.0

    def test_write_record(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        summary = service.describe_operator(small_config, starts=2)

        path = service.write_operator_record(small_config, summary)

        assert path.name == f"operator-{small_config.config_hash()}.json"
        assert read_json(path)["lambda1"] == pytest.approx(summary.record["lambda1"])

    def test_format_record(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        text = format_operator_record(service.describe_operator(small_config, starts=2).record)

        assert "🧮 Operator local (s=1, gamma=1)" in text
        assert "gamma_hat    none" in text


class TestInitialDatum:
    """Test the initial datum kinds."""

    def test_point_mass_has_unit_mass(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        config = small_config.with_overrides(datum="point_mass")
        op = service.build_operator(config)

        u0 = service.make_initial_datum(config, op)

        assert float(u0.values.sum()) * op.grid.quad_weight == pytest.approx(1.0)
        assert np.count_nonzero(u0.values) == 1

    def test_bump_is_compactly_supported(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        config = small_config.with_overrides(datum="bump", scale=3.0)
        op = service.build_operator(config)

        u0 = service.make_initial_datum(config, op)

        assert u0.values[0] == 0.0
        assert u0.values[-1] == 0.0
        assert 0.0 < u0.values.max() <= 3.0

    def test_constant_scaled(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        config = small_config.with_overrides(datum="constant", scale=2.0)
        op = service.build_operator(config)

        np.testing.assert_array_equal(service.make_initial_datum(config, op).values, 2.0)

    def test_separable_profile(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        config = small_config.with_overrides(datum="separable")
        op = service.build_operator(config)

        w = service.make_initial_datum(config, op).values

        residual = op.apply(w**0.5) - w / (1.0 - 0.5)
        assert np.abs(residual).max() <= 1e-8 * np.abs(w).max()

    def test_custom_csv(
        self, service: ExperimentService, small_config: ExperimentConfig, tmp_path: Path
    ) -> None:
        grid = make_grid(1, 16)
        path = tmp_path / "u0.csv"
        write_field(path, np.linspace(0.0, 1.0, grid.size), grid)
        config = small_config.with_overrides(datum="custom_csv", datum_path=path)
        op = service.build_operator(config)

        u0 = service.make_initial_datum(config, op)

        np.testing.assert_array_equal(u0.values, np.linspace(0.0, 1.0, grid.size))


class TestSolveAndLoad:
    """Test writing and re-reading run directories."""

    def test_solve_writes_complete_run(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        # ACT
        result = service.solve(small_config)

        # ASSERT
        assert is_complete(result.run_dir)
        assert result.trajectory.extinct
        header = (result.run_dir / TRAJECTORY_FILE).read_text(encoding="utf-8").splitlines()[0]
        assert header == ",".join(("t", *NORM_COLUMNS))
        manifest = read_json(result.run_dir / MANIFEST_FILE)
        assert manifest["seed"] == result.seed
        assert manifest["operator"]["kind"] == "local"
        assert manifest["extinct"] is True
        assert len(manifest["snapshots"]) == len(result.trajectory.times)

    def test_solve_is_deterministic(self, tmp_path: Path, small_config: ExperimentConfig) -> None:
        """Test byte-identical trajectories from two independent solves."""
        first = ExperimentService(Settings(output_root=tmp_path / "a", seed=None)).solve(small_config)
        second = ExperimentService(Settings(output_root=tmp_path / "b", seed=None)).solve(small_config)

        assert first.run_dir.name == second.run_dir.name
        for name in (TRAJECTORY_FILE, "trace.csv", "snapshots/snapshot_00000.csv"):
            assert (first.run_dir / name).read_bytes() == (second.run_dir / name).read_bytes()

    def test_seed_changes_run_dir(self, tmp_path: Path, small_config: ExperimentConfig) -> None:
        one = ExperimentService(Settings(output_root=tmp_path, seed=1)).run_dir_for(small_config)
        two = ExperimentService(Settings(output_root=tmp_path, seed=2)).run_dir_for(small_config)

        assert one != two

    def test_failed_run_keeps_partial_marker(
        self, service: ExperimentService, small_config: ExperimentConfig, tmp_path: Path
    ) -> None:
        config = small_config.with_overrides(datum="custom_csv", datum_path=tmp_path / "missing.csv")

        with pytest.raises(FileNotFoundError):
            service.solve(config)

        run_dir = service.run_dir_for(config)
        assert (run_dir / PARTIAL_MARKER).exists()
        assert not (run_dir / MANIFEST_FILE).exists()

    def test_load_run_round_trip(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        # ARRANGE
        result = service.solve(small_config)

        # ACT
        loaded = service.load_run(result.run_dir)

        # ASSERT: Exact floats survive the 17-digit CSV files
        original = result.trajectory
        restored = loaded.trajectory
        np.testing.assert_array_equal(restored.times, original.times)
        for column in NORM_COLUMNS:
            np.testing.assert_array_equal(restored.norm_series[column], original.norm_series[column])
        np.testing.assert_allclose(restored.norm_series["norm_Hum"], original.norm_series["norm_Hum"])
        np.testing.assert_array_equal(restored.snapshots[-1].values, original.snapshots[-1].values)
        assert restored.extinction == original.extinction
        assert loaded.config == small_config
        assert loaded.seed == result.seed

    def test_load_run_bad_manifest(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        result = service.solve(small_config)
        manifest = read_json(result.run_dir / MANIFEST_FILE)
        del manifest["seed"]
        write_json(result.run_dir / MANIFEST_FILE, manifest)

        with pytest.raises(StorageFormatError, match="invalid manifest"):
            service.load_run(result.run_dir)

    def test_load_run_missing(self, service: ExperimentService, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            service.load_run(tmp_path / "nothing")


class TestVerify:
    """Test verification of stored runs."""

    def test_writes_reports_and_summary(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        # ARRANGE
        run_dir = service.solve(small_config).run_dir
        checks = [CheckConfig(name="smoothing", params={"p": 1.0}), CheckConfig(name="kato", params={"trials": 5})]

        # ACT
        result = service.verify(run_dir, checks)

        # ASSERT
        assert result.explicit_violations == 0
        assert [report.name for report in result.reports] == ["smoothing_Lp", "kato"]
        payload = read_json(run_dir / "reports" / "00_smoothing.json")
        assert payload["params"] == {"p": 1.0}
        assert payload["explicit"] is False
        assert (run_dir / "reports" / "01_kato.csv").exists()
        summary = (run_dir / "summary.csv").read_text(encoding="utf-8").splitlines()
        assert summary[0] == ",".join(SUMMARY_HEADER)
        assert summary[2].startswith("kato,holds,")

    def test_checks_default_to_config(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        config = small_config.model_copy(update={"checks": [CheckConfig(name="kato", params={"trials": 3})]})
        run_dir = service.solve(config).run_dir

        result = service.verify(run_dir)

        assert [report.name for report in result.reports] == ["kato"]

    def test_partner_run(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        """Test that a partner run directory feeds the contraction check."""
        # ARRANGE: Ordered data u0 <= v0 on the same operator
        lower = service.solve(small_config).run_dir
        upper = service.solve(small_config.with_overrides(scale=2.0)).run_dir

        # ACT
        result = service.verify(lower, [CheckConfig(name="contraction", params={"partner": str(upper)})])

        # ASSERT
        (report,) = result.reports
        assert report.name == "contraction"
        assert report.has_explicit_violation() is False
        assert result.explicit_violations == 0

    def test_report_rows_prefix_children(self) -> None:
        child = InequalityReport(name="left", records=[Record("t=1", 1.0, 2.0, 0.5)], verdict=Verdict.HOLDS)
        parent = InequalityReport(
            name="energy_estimate", records=[], verdict=Verdict.HOLDS, children=[child]
        )

        assert report_rows(parent) == [("left/t=1", 1.0, 2.0, 0.5)]


class TestSweep:
    """Test parameter sweeps."""

    def test_inline_sweep(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        # ARRANGE
        plan = SweepPlan(axes={"m": [0.4, 0.6]})

        # ACT
        result = service.sweep(plan, small_config.with_overrides(n=8))

        # ASSERT
        assert result.failed == 0
        assert [cell.m for cell in result.cells] == [0.4, 0.6]
        assert all(cell.verdict == "holds_with_constant" for cell in result.cells)
        assert all(cell.t_fit is not None for cell in result.cells)
        lines = result.phase_path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(PHASE_HEADER)
        assert len(lines) == 3

    def test_resume_skips_complete_runs(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        plan = SweepPlan(axes={"m": [0.5]})
        base = small_config.with_overrides(n=8)
        first = service.sweep(plan, base)

        with patch("ffde_lab.core.ExperimentService.solve") as mock_solve:
            second = service.sweep(plan, base, resume=True)

        mock_solve.assert_not_called()
        assert second.cells[0].kappa_hat == first.cells[0].kappa_hat

    def test_failed_cells_are_recorded(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        plan = SweepPlan(axes={"kind": [OperatorKind.CFL], "s": [0.4, 0.75]})

        result = service.sweep(plan, small_config.with_overrides(n=8))

        assert result.cells[0].verdict == "failed"
        assert result.cells[0].error is not None
        assert result.cells[1].error is None
        assert result.failed == 1
        assert result.too_many_failures is True

    def test_below_critical_cells_keep_measured_kappa(
        self, service: ExperimentService, small_config: ExperimentConfig
    ) -> None:
        """Test that cells under p_c still carry kappa_hat and a drift row across n."""
        # ARRANGE: N = 1, s = 1/4, m = 0.3 gives p_c = 1.4 > p = 1
        plan = SweepPlan(axes={"kind": [OperatorKind.SFL], "s": [0.25], "m": [0.3], "n": [8, 16]})
        base = small_config.with_overrides(t_max=0.2)

        # ACT
        result = service.sweep(plan, base)

        # ASSERT
        assert result.failed == 0
        assert all(cell.verdict == "not_applicable" for cell in result.cells)
        assert all(0.0 < cell.kappa_hat < math.inf for cell in result.cells)
        assert len(result.refinements) == 1
        row = result.refinements[0]
        assert (row.n_coarse, row.n_fine) == (8, 16)
        assert row.drift == pytest.approx(smoothing_drift(row.kappa_coarse, row.kappa_fine))
        assert result.drift_path is not None
        lines = result.drift_path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(DRIFT_HEADER)
        assert len(lines) == 2
        phase = result.phase_path.read_text(encoding="utf-8").splitlines()
        assert all(line.split(",")[6] not in ("", "nan") for line in phase[1:])

    def test_no_drift_table_without_n_axis(
        self, service: ExperimentService, small_config: ExperimentConfig
    ) -> None:
        result = service.sweep(SweepPlan(axes={"m": [0.5]}), small_config.with_overrides(n=8))

        assert result.refinements == ()
        assert result.drift_path is None

    def test_refinement_rows_pair_neighbouring_n(self) -> None:
        # ARRANGE: Unordered ladder, a failed cell and a second group
        cells = [
            SweepCell(0, 0.3, 0.25, 1.0, "sfl", 32, "not_applicable", 3.3, None, "c"),
            SweepCell(1, 0.3, 0.25, 1.0, "sfl", 8, "not_applicable", 1.0, None, "a"),
            SweepCell(2, 0.3, 0.25, 1.0, "sfl", 16, "not_applicable", 3.0, None, "b"),
            SweepCell(3, 0.3, 0.25, 1.0, "sfl", 64, "failed", math.nan, None, "", error="boom"),
            SweepCell(4, 0.7, 0.25, 1.0, "sfl", 8, "holds_with_constant", 2.0, 0.5, "d"),
        ]

        # ACT
        rows = refinement_rows(cells)

        # ASSERT
        assert [(r.n_coarse, r.n_fine) for r in rows] == [(8, 16), (16, 32)]
        assert rows[0].drift == pytest.approx(3.0)
        assert rows[1].drift == pytest.approx(1.1)
        assert all(r.m == 0.3 for r in rows)

    def test_nonpositive_kappa_is_infinite_drift(self) -> None:
        cells = [
            SweepCell(0, 0.5, 1.0, 1.0, "local", 8, "holds_with_constant", 0.0, None, "a"),
            SweepCell(1, 0.5, 1.0, 1.0, "local", 16, "holds_with_constant", 1.0, None, "b"),
        ]

        (row,) = refinement_rows(cells)

        assert row.drift == math.inf

    def test_local_kind_forces_s_one(self, small_config: ExperimentConfig) -> None:
        base = small_config.with_overrides(kind="rfl", s=0.5)

        config = cell_config(base, {"kind": OperatorKind.LOCAL, "s": 0.3})

        assert config.operator.kind is OperatorKind.LOCAL
        assert config.operator.s == 1.0


class TestFormatting:
    """Test console formatting helpers."""

    @pytest.mark.parametrize(
        ("verdict", "expected"),
        [
            (Verdict.HOLDS, "✅ holds"),
            ("holds_with_constant", "📏 holds with constant"),
            (Verdict.VIOLATED, "❌ violated"),
            (Verdict.NOT_APPLICABLE, "➖ not applicable"),
        ],
    )
    def test_verdict_display(self, verdict: Verdict | str, expected: str) -> None:
        assert get_verdict_display(verdict) == expected

    def test_extinction_line_without_extinction(self) -> None:
        op = build_local_laplacian(make_grid(1, 8))
        traj = run_flow(op, op.spectral.phi1, 0.5, SolverConfig(dt_init=1e-3, t_max=0.005))

        assert format_extinction_line(traj).startswith("T_hat=none T_fit=none (no extinction before t=")

    def test_verify_summary(self, tmp_path: Path) -> None:
        reports = [
            InequalityReport(name="kato", records=[], verdict=Verdict.HOLDS, explicit=True),
            InequalityReport(
                name="smoothing_Lp",
                records=[Record("a", 1.0, 1.0, 1.0)],
                verdict=Verdict.HOLDS_WITH_CONSTANT,
                empirical_constant=1.0,
                hypothesis_note="outside stated hypotheses (N <= 2s)",
            ),
        ]

        clean = format_verify_summary(VerifyResult(tmp_path, reports, 0))
        dirty = format_verify_summary(VerifyResult(tmp_path, reports, 2))

        assert "📊 Verification Summary" in clean
        assert "(C=1)" in clean
        assert "outside stated hypotheses" in clean
        assert "✅ No explicit-constant violations" in clean
        assert "❌ Explicit-constant violations: 2" in dirty

    def test_exponent_table_marks_poles(self) -> None:
        """Test that p = p_c = 1/2 shows a pole for N = 1, s = 1/2, m = 1/2."""
        table = critical_exponents(1, 0.5, 0.5, 1.0)

        text = format_exponent_table(table, [0.5, 2.0])

        assert "📐 Exponents for N=1, s=0.5, m=0.5, gamma=1" in text
        assert "theta(p=0.5)" in text
        assert "pole" in text
        assert "regime_label" in text

    def test_sweep_summary(self, tmp_path: Path) -> None:
        cells = [
            SweepCell(0, 0.5, 1.0, 1.0, "local", 8, "holds_with_constant", 1.0, 0.2, "run-a"),
            SweepCell(1, 0.5, 1.0, 1.0, "local", 8, "failed", float("nan"), None, "", error="boom"),
        ]

        text = format_sweep_summary(SweepResult(cells, tmp_path / "phase.csv"))

        assert "Cells: 2" in text
        assert "failed" in text
        assert f"📄 Phase diagram: {tmp_path / 'phase.csv'}" in text

    def test_sweep_summary_with_drift(self, tmp_path: Path) -> None:
        cells = [SweepCell(0, 0.5, 1.0, 1.0, "local", 8, "holds_with_constant", 1.0, 0.2, "run-a")]
        rows = (
            RefinementRow(0.5, 1.0, 1.0, "local", 8, 16, 1.0, 1.5, 1.5),
            RefinementRow(0.3, 0.25, 1.0, "sfl", 8, 16, 1.0, 2.5, 2.5),
        )

        text = format_sweep_summary(SweepResult(cells, tmp_path / "phase.csv", rows, tmp_path / "drift.csv"))

        assert "📏 Refinement drift: 1/2 pairs within 2x" in text
        assert f"📄 Drift table: {tmp_path / 'drift.csv'}" in text


    def test_manifest_is_json(self, service: ExperimentService, small_config: ExperimentConfig) -> None:
        run_dir = service.solve(small_config.with_overrides(datum=DatumKind.BUMP)).run_dir

        manifest = json.loads((run_dir / MANIFEST_FILE).read_text(encoding="utf-8"))

        assert manifest["config"]["initial_datum"]["kind"] == "bump"
        assert manifest["format_version"] == 1
