"""
Run directory I/O.

A run directory holds trajectory.csv, trace.csv, snapshots/snapshot_NNNNN.csv
and manifest.json, which is written last. A `.partial` marker exists while a
run is being written or after it failed. Floats are written with 17
significant digits so files reproduce the in-memory values exactly.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from ffde_lab.errors import StorageFormatError
from ffde_lab.mesh import FloatArray, Grid

TRAJECTORY_FILE = "trajectory.csv"
TRACE_FILE = "trace.csv"
MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.json"
PARTIAL_MARKER = ".partial"
SNAPSHOT_DIR = "snapshots"
REPORT_DIR = "reports"
SUMMARY_FILE = "summary.csv"
PHASE_FILE = "phase.csv"
DRIFT_FILE = "drift.csv"

TRACE_HEADER = ("t", "norm_Linf", "norm_L1pm")
RECORD_HEADER = ("label", "lhs", "rhs", "ratio")
SUMMARY_HEADER = ("name", "verdict", "explicit", "empirical_constant", "theoretical_constant", "n_records")
PHASE_HEADER = ("m", "s", "p", "kind", "n", "verdict", "kappa_hat", "T_fit")
DRIFT_HEADER = ("m", "s", "p", "kind", "n_coarse", "n_fine", "kappa_coarse", "kappa_fine", "drift")
COORD_TOL = 1e-12


class StoredRun(NamedTuple):
    """Raw contents of a run directory."""

    manifest: dict[str, Any]
    times: FloatArray
    norms: dict[str, FloatArray]
    snapshots: list[FloatArray]
    trace: FloatArray


def format_float(value: float) -> str:
    """17 significant digits; non-finite values as nan, inf, -inf."""
    return format(float(value), ".17g")


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float | np.floating):
        return format_float(float(value))
    return str(value)


def json_safe(value: Any) -> Any:
    """Convert numpy scalars and non-finite floats into JSON-friendly values."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [json_safe(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        value = float(value)
        return value if math.isfinite(value) else format_float(value)
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: Path, data: dict[str, Any]) -> None:
    path.write_text(json.dumps(json_safe(data), indent=2) + "\n", encoding="utf-8")


def read_json(path: Path) -> dict[str, Any]:
    """
    Read a JSON object.

    Raises:
        FileNotFoundError: If the file does not exist
        StorageFormatError: If the file is not a JSON object
    """
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise StorageFormatError(f"Invalid JSON in {path}: {e}") from e
    if not isinstance(data, dict):
        raise StorageFormatError(f"{path} does not hold a JSON object")
    return data


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(cell) for cell in row])


def read_numeric_csv(path: Path, header: Sequence[str]) -> FloatArray:
    """
    Read a numeric CSV with an exact header into a (rows, columns) array.

    Raises:
        FileNotFoundError: If the file does not exist
        StorageFormatError: On a header mismatch, a short row or a non-numeric cell
    """
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        found = next(reader, None)
        if found != list(header):
            raise StorageFormatError(f"{path}: expected header {','.join(header)}, got {found}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise StorageFormatError(f"{path}:{line_no}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as e:
                raise StorageFormatError(f"{path}:{line_no}: {e}") from e
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def _coord_header(dim: int) -> tuple[str, ...]:
    return ("x", "u") if dim == 1 else ("x", "y", "u")


def write_field(path: Path, values: FloatArray, grid: Grid) -> None:
    """Write one field as `x[,y],u` rows in node order."""
    rows = (
        (*coords, value) for coords, value in zip(grid.nodes.tolist(), values.tolist(), strict=True)
    )
    write_csv(path, _coord_header(grid.dim), rows)


def read_field(path: Path, grid: Grid) -> FloatArray:
    """
    Read a `x[,y],u` field and check its coordinates against the grid.

    Raises:
        StorageFormatError: If the header, node count or coordinates disagree
    """
    table = read_numeric_csv(path, _coord_header(grid.dim))
    if table.shape[0] != grid.size:
        raise StorageFormatError(f"{path}: expected {grid.size} nodes, got {table.shape[0]}")
    if not np.allclose(table[:, :-1], grid.nodes, rtol=0.0, atol=COORD_TOL):
        raise StorageFormatError(f"{path}: node coordinates do not match the grid")
    return table[:, -1].copy()


def snapshot_name(index: int) -> str:
    return f"{SNAPSHOT_DIR}/snapshot_{index:05d}.csv"


def begin_run(run_dir: Path, config: dict[str, Any]) -> None:
    """Create the directory, drop a stale manifest, store the config and set the partial marker."""
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / CONFIG_FILE, config)
    (run_dir / SNAPSHOT_DIR).mkdir(exist_ok=True)
    (run_dir / MANIFEST_FILE).unlink(missing_ok=True)
    (run_dir / PARTIAL_MARKER).write_text("running\n", encoding="utf-8")


def mark_partial(run_dir: Path, reason: str) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / PARTIAL_MARKER).write_text(reason + "\n", encoding="utf-8")


def is_complete(run_dir: Path) -> bool:
    """A run is complete when its manifest parses and no partial marker remains."""
    if (run_dir / PARTIAL_MARKER).exists():
        return False
    try:
        read_json(run_dir / MANIFEST_FILE)
    except (FileNotFoundError, StorageFormatError):
        return False
    return True


def write_run(
    run_dir: Path,
    grid: Grid,
    times: FloatArray,
    norms: dict[str, FloatArray],
    norm_columns: Sequence[str],
    snapshots: Sequence[FloatArray],
    trace: Sequence[FloatArray],
    manifest: dict[str, Any],
) -> None:
    """
    Write all files of a run, manifest last, then clear the partial marker.

    Args:
        run_dir: Target directory (begin_run must have been called)
        grid: Grid of the snapshots
        times: Snapshot times
        norms: Norm table keyed by column name
        norm_columns: Columns written to trajectory.csv after t
        snapshots: Snapshot values aligned with times
        trace: (t, norm_Linf, norm_L1pm) arrays of the step trace
        manifest: Run description written to manifest.json
    """
    columns = [norms[name] for name in norm_columns]
    write_csv(
        run_dir / TRAJECTORY_FILE,
        ("t", *norm_columns),
        ((t, *(col[k] for col in columns)) for k, t in enumerate(times.tolist())),
    )
    names = []
    for index, values in enumerate(snapshots):
        name = snapshot_name(index)
        write_field(run_dir / name, values, grid)
        names.append(name)
    write_csv(run_dir / TRACE_FILE, TRACE_HEADER, zip(*(a.tolist() for a in trace), strict=True))

    write_json(run_dir / MANIFEST_FILE, {**manifest, "snapshots": names})
    (run_dir / PARTIAL_MARKER).unlink(missing_ok=True)


def read_run(run_dir: Path, grid: Grid, norm_columns: Sequence[str]) -> StoredRun:
    """
    Read the files of a completed run.

    Raises:
        FileNotFoundError: If the manifest or a listed file is missing
        StorageFormatError: If a file is malformed or inconsistent with the manifest
    """
    manifest = read_json(run_dir / MANIFEST_FILE)
    table = read_numeric_csv(run_dir / TRAJECTORY_FILE, ("t", *norm_columns))
    names = manifest.get("snapshots")
    if not isinstance(names, list) or len(names) != table.shape[0]:
        raise StorageFormatError(f"{run_dir}: snapshot list does not match {TRAJECTORY_FILE}")
    times = table[:, 0]
    if np.any(np.diff(times) <= 0.0):
        raise StorageFormatError(f"{run_dir}: snapshot times are not strictly increasing")
    norms = {name: table[:, k + 1] for k, name in enumerate(norm_columns)}
    snapshots = [read_field(run_dir / name, grid) for name in names]
    trace = read_numeric_csv(run_dir / TRACE_FILE, TRACE_HEADER)
    return StoredRun(manifest=manifest, times=times, norms=norms, snapshots=snapshots, trace=trace)


def report_filename(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", name).strip("_")


def write_report(report_dir: Path, name: str, payload: dict[str, Any], records: Iterable[Sequence[Any]]) -> Path:
    """Write `<name>.json` and the full record table `<name>.csv`; returns the JSON path."""
    report_dir.mkdir(parents=True, exist_ok=True)
    stem = report_filename(name)
    json_path = report_dir / f"{stem}.json"
    write_json(json_path, payload)
    write_csv(report_dir / f"{stem}.csv", RECORD_HEADER, records)
    return json_path
