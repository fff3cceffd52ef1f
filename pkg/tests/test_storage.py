"""
Tests for run directory I/O.

Covers CSV and JSON formatting, field files, the partial-run marker and
corrupt-file detection.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from ffde_lab.errors import StorageFormatError
from ffde_lab.mesh import make_grid
from ffde_lab.storage import (
    MANIFEST_FILE,
    PARTIAL_MARKER,
    TRACE_HEADER,
    begin_run,
    format_cell,
    format_float,
    is_complete,
    json_safe,
    mark_partial,
    read_field,
    read_json,
    read_numeric_csv,
    read_run,
    report_filename,
    snapshot_name,
    write_csv,
    write_field,
    write_report,
    write_run,
)


class TestFormatting:
    """Test cell and JSON conversions."""

    def test_seventeen_digits(self) -> None:
        assert format_float(0.1) == "0.10000000000000001"
        assert float(format_float(1.0 / 3.0)) == 1.0 / 3.0

    def test_non_finite(self) -> None:
        assert format_float(math.inf) == "inf"
        assert format_float(-math.inf) == "-inf"
        assert format_float(math.nan) == "nan"

    @pytest.mark.parametrize(
        ("value", "expected"),
        [(None, ""), (True, "true"), (False, "false"), (3, "3"), ("rfl", "rfl"), (np.float64(0.5), "0.5")],
    )
    def test_format_cell(self, value: object, expected: str) -> None:
        assert format_cell(value) == expected

    def test_json_safe(self) -> None:
        data = {
            "a": np.float64(1.5),
            "b": np.int64(3),
            "c": np.bool_(True),
            "d": [math.inf, math.nan],
            "e": np.array([1.0, 2.0]),
            "f": Path("runs/x"),
        }

        safe = json_safe(data)

        assert safe == {"a": 1.5, "b": 3, "c": True, "d": ["inf", "nan"], "e": [1.0, 2.0], "f": "runs/x"}
        json.dumps(safe, allow_nan=False)


class TestCsv:
    """Test numeric CSV reading and writing."""

    def test_header_and_line_endings(self, tmp_path: Path) -> None:
        path = tmp_path / "table.csv"

        write_csv(path, ("t", "value"), [(0.0, 1.0), (0.5, None)])

        assert path.read_bytes() == b"t,value\n0,1\n0.5,\n"

    def test_round_trip_is_exact(self, tmp_path: Path) -> None:
        path = tmp_path / "table.csv"
        values = np.random.default_rng(0).standard_normal((5, 3))

        write_csv(path, TRACE_HEADER, values.tolist())

        np.testing.assert_array_equal(read_numeric_csv(path, TRACE_HEADER), values)

    def test_header_mismatch(self, tmp_path: Path) -> None:
        path = tmp_path / "table.csv"
        write_csv(path, ("t", "norm_Linf"), [(0.0, 1.0)])

        with pytest.raises(StorageFormatError, match="expected header"):
            read_numeric_csv(path, TRACE_HEADER)

    def test_short_row(self, tmp_path: Path) -> None:
        path = tmp_path / "table.csv"
        path.write_text("t,norm_Linf,norm_L1pm\n0,1\n", encoding="utf-8")

        with pytest.raises(StorageFormatError, match=":2:"):
            read_numeric_csv(path, TRACE_HEADER)

    def test_non_numeric_cell(self, tmp_path: Path) -> None:
        path = tmp_path / "table.csv"
        path.write_text("t,norm_Linf,norm_L1pm\n0,1,abc\n", encoding="utf-8")

        with pytest.raises(StorageFormatError):
            read_numeric_csv(path, TRACE_HEADER)

    def test_empty_table(self, tmp_path: Path) -> None:
        path = tmp_path / "table.csv"
        write_csv(path, TRACE_HEADER, [])

        assert read_numeric_csv(path, TRACE_HEADER).shape == (0, 3)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            read_numeric_csv(tmp_path / "missing.csv", TRACE_HEADER)


class TestJson:
    """Test JSON helpers."""

    def test_invalid_json(self, tmp_path: Path) -> None:
        path = tmp_path / "manifest.json"
        path.write_text("{not json", encoding="utf-8")

        with pytest.raises(StorageFormatError):
            read_json(path)

    def test_not_an_object(self, tmp_path: Path) -> None:
        path = tmp_path / "manifest.json"
        path.write_text("[1, 2]", encoding="utf-8")

        with pytest.raises(StorageFormatError):
            read_json(path)


class TestFields:
    """Test field files."""

    def test_one_dimensional_layout(self, tmp_path: Path) -> None:
        grid = make_grid(1, 3)
        path = tmp_path / "u.csv"

        write_field(path, np.array([1.0, 2.0, 3.0]), grid)

        assert path.read_text(encoding="utf-8") == "x,u\n0.25,1\n0.5,2\n0.75,3\n"

    def test_two_dimensional_round_trip(self, tmp_path: Path) -> None:
        grid = make_grid(2, 3)
        path = tmp_path / "u.csv"
        values = np.arange(grid.size, dtype=np.float64)

        write_field(path, values, grid)

        np.testing.assert_array_equal(read_field(path, grid), values)
        assert path.read_text(encoding="utf-8").startswith("x,y,u\n")

    def test_node_count_mismatch(self, tmp_path: Path) -> None:
        path = tmp_path / "u.csv"
        write_field(path, np.ones(3), make_grid(1, 3))

        with pytest.raises(StorageFormatError, match="nodes"):
            read_field(path, make_grid(1, 4))

    def test_coordinate_mismatch(self, tmp_path: Path) -> None:
        path = tmp_path / "u.csv"
        path.write_text("x,u\n0.2,1\n0.5,2\n0.75,3\n", encoding="utf-8")

        with pytest.raises(StorageFormatError, match="coordinates"):
            read_field(path, make_grid(1, 3))

    def test_snapshot_name(self) -> None:
        assert snapshot_name(7) == "snapshots/snapshot_00007.csv"


class TestRunLifecycle:
    """Test the partial marker and complete runs."""

    def _write_complete(self, run_dir: Path) -> None:
        grid = make_grid(1, 3)
        begin_run(run_dir, {"m": 0.5})
        write_run(
            run_dir,
            grid,
            np.array([0.0, 0.5]),
            {"norm_L1": np.array([1.0, 0.5])},
            ("norm_L1",),
            [np.ones(3), 0.5 * np.ones(3)],
            [np.array([0.0, 0.5]), np.array([1.0, 0.5]), np.array([1.0, 0.5])],
            {"format_version": 1},
        )

    def test_begin_run_marks_partial(self, tmp_path: Path) -> None:
        run_dir = tmp_path / "run"

        begin_run(run_dir, {"m": 0.5})

        assert (run_dir / PARTIAL_MARKER).exists()
        assert read_json(run_dir / "config.json") == {"m": 0.5}
        assert is_complete(run_dir) is False

    def test_write_run_completes(self, tmp_path: Path) -> None:
        # ARRANGE & ACT
        run_dir = tmp_path / "run"
        self._write_complete(run_dir)

        # ASSERT
        assert is_complete(run_dir) is True
        manifest = read_json(run_dir / MANIFEST_FILE)
        assert manifest["snapshots"] == [snapshot_name(0), snapshot_name(1)]
        stored = read_run(run_dir, make_grid(1, 3), ("norm_L1",))
        np.testing.assert_array_equal(stored.times, [0.0, 0.5])
        np.testing.assert_array_equal(stored.snapshots[1], [0.5, 0.5, 0.5])
        assert stored.trace.shape == (2, 3)

    def test_restart_clears_manifest(self, tmp_path: Path) -> None:
        run_dir = tmp_path / "run"
        self._write_complete(run_dir)

        begin_run(run_dir, {"m": 0.5})

        assert not (run_dir / MANIFEST_FILE).exists()
        assert is_complete(run_dir) is False

    def test_mark_partial_records_reason(self, tmp_path: Path) -> None:
        run_dir = tmp_path / "run"
        self._write_complete(run_dir)

        mark_partial(run_dir, "NewtonDivergence: step failed")

        assert is_complete(run_dir) is False
        assert "NewtonDivergence" in (run_dir / PARTIAL_MARKER).read_text(encoding="utf-8")

    def test_snapshot_list_mismatch(self, tmp_path: Path) -> None:
        run_dir = tmp_path / "run"
        self._write_complete(run_dir)
        manifest = read_json(run_dir / MANIFEST_FILE)
        manifest["snapshots"] = manifest["snapshots"][:1]
        (run_dir / MANIFEST_FILE).write_text(json.dumps(manifest), encoding="utf-8")

        with pytest.raises(StorageFormatError, match="snapshot list"):
            read_run(run_dir, make_grid(1, 3), ("norm_L1",))

    def test_corrupt_manifest_is_incomplete(self, tmp_path: Path) -> None:
        run_dir = tmp_path / "run"
        self._write_complete(run_dir)
        (run_dir / MANIFEST_FILE).write_text("{", encoding="utf-8")

        assert is_complete(run_dir) is False


class TestReports:
    """Test report files."""

    def test_report_filename(self) -> None:
        assert report_filename("03_stroock_varopoulos_q=2.0") == "03_stroock_varopoulos_q=2.0"
        assert report_filename("(d) L1pm sharp/rate") == "d_L1pm_sharp_rate"

    def test_write_report(self, tmp_path: Path) -> None:
        path = write_report(tmp_path / "reports", "00_kato", {"verdict": "holds"}, [("a", 1.0, 2.0, 0.5)])

        assert path == tmp_path / "reports" / "00_kato.json"
        assert read_json(path) == {"verdict": "holds"}
        assert (tmp_path / "reports" / "00_kato.csv").read_text(encoding="utf-8") == "label,lhs,rhs,ratio\na,1,2,0.5\n"
