"""
Experiment orchestration.

This module holds the logic behind the CLI commands: building operators,
running flows into run directories, re-loading them, running the estimate
harness and sweeping parameters. Console formatting lives here too, kept
apart from the typer commands so it can be tested directly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from pydantic import ValidationError

from ffde_lab import __version__, storage
from ffde_lab.constants import ExponentTable, is_pole
from ffde_lab.errors import FfdeError, OperatorConstructionError, StorageFormatError, TooFewNodes
from ffde_lab.flow import (
    NORM_COLUMNS,
    ExtinctionEstimate,
    StepAudit,
    StepTrace,
    Trajectory,
    compute_norm_series,
    run_flow,
    solve_separable_profile,
)
from ffde_lab.mesh import boundary_distance, make_grid
from ffde_lab.norms import Field, estimate_functional_constants
from ffde_lab.operators import (
    DiscreteOperator,
    KernelBoundReport,
    OperatorKind,
    build_operator,
    check_kernel_bounds,
    fit_boundary_exponent,
)
from ffde_lab.settings import CheckConfig, DatumKind, ExperimentConfig, Settings, SweepPlan
from ffde_lab.verify import (
    CHECKS,
    DRIFT_LIMIT,
    CheckContext,
    InequalityReport,
    Verdict,
    run_check,
    smoothing_drift,
)

logger = logging.getLogger(__name__)

BUMP_RADIUS = 0.25
SWEEP_FAILURE_LIMIT = 0.1
SWEEP_CHECK = "smoothing"
RUN_PARAM_KEYS = ("partner", "refined")


class OperatorSummary(NamedTuple):
    """Operator JSON record plus the reports it was assembled from."""

    record: dict[str, Any]
    kernel: KernelBoundReport


class SolveResult(NamedTuple):
    """A finished flow run and where it was written."""

    run_dir: Path
    trajectory: Trajectory
    seed: int


class LoadedRun(NamedTuple):
    """A run directory read back into memory."""

    run_dir: Path
    config: ExperimentConfig
    seed: int
    trajectory: Trajectory


class VerifyResult(NamedTuple):
    """Reports of one verify invocation."""

    run_dir: Path
    reports: list[InequalityReport]
    explicit_violations: int


class SweepCell(NamedTuple):
    """One row of the phase diagram; error is set when the cell failed."""

    index: int
    m: float
    s: float
    p: float
    kind: str
    n: int
    verdict: str
    kappa_hat: float
    t_fit: float | None
    run_dir: str
    error: str | None = None


class RefinementRow(NamedTuple):
    """kappa_hat of one sweep cell against the next finer n with the same m, s, p and kind."""

    m: float
    s: float
    p: float
    kind: str
    n_coarse: int
    n_fine: int
    kappa_coarse: float
    kappa_fine: float
    drift: float


class SweepResult(NamedTuple):
    """Rows of a sweep and the CSVs written from them."""

    cells: list[SweepCell]
    phase_path: Path
    refinements: tuple[RefinementRow, ...] = ()
    drift_path: Path | None = None

    @property
    def failed(self) -> int:
        return sum(1 for cell in self.cells if cell.error is not None)

    @property
    def too_many_failures(self) -> bool:
        return self.failed > SWEEP_FAILURE_LIMIT * len(self.cells)


class ExperimentService:
    """Service class for experiment operations."""

    def __init__(self, settings: Settings | None = None) -> None:
        """Initialize the service with optional settings."""
        self.settings = settings or Settings()

    def build_operator(self, config: ExperimentConfig) -> DiscreteOperator:
        """
        Assemble the operator of a config.

        A single-node grid is always rescaled to A = 1 so the scalar problem
        u' = -u^m is available; normalize_lambda1 rescales any grid to
        lambda_1 = 1.

        Raises:
            OperatorConstructionError: If the grid exceeds max_nodes or the
                operator cannot be built
        """
        grid = make_grid(config.grid.dim, config.grid.n)
        if grid.size > self.settings.max_nodes:
            raise OperatorConstructionError(
                f"Grid has {grid.size} nodes, more than max_nodes={self.settings.max_nodes}"
            )
        op = build_operator(
            config.operator.to_spec(), grid, allow_2d=self.settings.enable_2d_kernels
        )
        if grid.size == 1 or config.operator.normalize_lambda1:
            op = op.normalized()
        logger.debug("Built %s operator on %d nodes (scale %.6g)", op.spec.kind, grid.size, op.scale)
        return op

    def describe_operator(
        self, config: ExperimentConfig, *, starts: int = 50
    ) -> OperatorSummary:
        """
        Build an operator and collect its spectral and kernel diagnostics.

        Args:
            config: Experiment config (operator and grid sections are used)
            starts: Random starts of the functional-constant estimates

        Returns:
            OperatorSummary whose record has the keys kind, s, gamma, dim, n,
            lambda1, c0_hat, c1_hat, gamma_hat, sobolev_S, hls_H, converged
        """
        op = self.build_operator(config)
        spec = op.spec
        grid = op.grid
        spectral = op.spectral
        kernel = check_kernel_bounds(op.green, spec)

        gamma_hat: float | None
        try:
            gamma_hat = fit_boundary_exponent(spectral, boundary_distance(grid))
        except TooFewNodes as e:
            logger.info("Boundary exponent not fitted: %s", e)
            gamma_hat = None

        seed = config.effective_seed(self.settings)
        functional = estimate_functional_constants(
            op, op.green, grid.dim, spec.s, starts=starts, seed=seed
        )
        record = {
            **spec.to_dict(),
            "dim": grid.dim,
            "n": grid.n_per_axis,
            "scale": op.scale,
            "lambda1": spectral.lambda1,
            "c0_hat": kernel.c0_hat,
            "c1_hat": kernel.c1_hat,
            "gamma_hat": gamma_hat,
            "sobolev_S": functional.sobolev_S,
            "hls_H": functional.hls_H,
            "converged": {
                "sobolev": functional.sobolev_converged,
                "hls": functional.hls_converged,
            },
            "offdiag_nonpositive": op.offdiag_nonpositive,
            "min_green_entry": op.green.min_relative_entry,
        }
        return OperatorSummary(record=record, kernel=kernel)

    def write_operator_record(
        self, config: ExperimentConfig, summary: OperatorSummary, path: Path | None = None
    ) -> Path:
        """Write the operator JSON record; defaults to operator-<hash>.json under the output root."""
        if path is None:
            root = config.output_dir or self.settings.output_root
            path = root / f"operator-{config.config_hash()}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        storage.write_json(path, summary.record)
        return path

    def make_initial_datum(self, config: ExperimentConfig, op: DiscreteOperator) -> Field:
        """
        Build u0 = scale * shape for the configured datum kind.

        Raises:
            FileNotFoundError: If a custom_csv datum file does not exist
            StorageFormatError: If the custom_csv file does not match the grid
            ProfileNotFound: If the separable profile cannot be computed
        """
        datum = config.initial_datum
        grid = op.grid
        kind = datum.kind
        if kind is DatumKind.EIGENFUNCTION:
            shape = op.spectral.phi1.values
        elif kind is DatumKind.POINT_MASS:
            shape = np.zeros(grid.size)
            shape[grid.center_index()] = grid.quad_weight**-1
        elif kind is DatumKind.SEPARABLE:
            shape = solve_separable_profile(op, config.m).values
        elif kind is DatumKind.BUMP:
            r = np.linalg.norm(grid.nodes - 0.5, axis=1)
            shape = np.where(r < BUMP_RADIUS, np.cos(0.5 * math.pi * r / BUMP_RADIUS) ** 2, 0.0)
        elif kind is DatumKind.CONSTANT:
            shape = np.ones(grid.size)
        else:
            assert datum.path is not None
            shape = storage.read_field(datum.path, grid)
        return Field(datum.scale * shape, grid)

    def run_dir_for(self, config: ExperimentConfig) -> Path:
        """Run directory named from the content hash of the config and its seed."""
        seed = config.effective_seed(self.settings)
        digest = config.model_copy(update={"seed": seed}).config_hash()
        root = config.output_dir or self.settings.output_root
        return root / f"run-{digest}"

    def solve(self, config: ExperimentConfig) -> SolveResult:
        """
        Run the flow of a config and write its run directory.

        Files are written under a `.partial` marker which is removed only after
        the manifest is in place. A failing run keeps the marker with the reason.

        Raises:
            FfdeError: Construction, profile or Newton failures
        """
        seed = config.effective_seed(self.settings)
        run_dir = self.run_dir_for(config)
        logger.info("Solving into %s", run_dir)
        storage.begin_run(run_dir, config.model_dump(mode="json"))
        try:
            op = self.build_operator(config)
            u0 = self.make_initial_datum(config, op)
            trajectory = run_flow(op, u0, config.m, config.solver, lp=config.lp)
        except (FfdeError, OSError) as e:
            storage.mark_partial(run_dir, f"failed: {e}")
            raise

        storage.write_run(
            run_dir,
            op.grid,
            trajectory.times,
            trajectory.norm_series,
            NORM_COLUMNS,
            [f.values for f in trajectory.snapshots],
            (trajectory.trace.t, trajectory.trace.linf, trajectory.trace.l1pm),
            self._manifest(config, seed, trajectory),
        )
        return SolveResult(run_dir=run_dir, trajectory=trajectory, seed=seed)

    def _manifest(
        self, config: ExperimentConfig, seed: int, trajectory: Trajectory
    ) -> dict[str, Any]:
        op = trajectory.operator
        extinction = trajectory.extinction
        return {
            "format_version": 1,
            "package_version": __version__,
            "config": config.model_dump(mode="json"),
            "seed": seed,
            "operator": {
                **op.spec.to_dict(),
                "dim": op.grid.dim,
                "n": op.grid.n_per_axis,
                "scale": op.scale,
                "offdiag_nonpositive": op.offdiag_nonpositive,
            },
            "solver": config.solver.model_dump(mode="json"),
            "m": trajectory.m,
            "lp": trajectory.lp,
            "signed_input": trajectory.signed_input,
            "extinct": trajectory.extinct,
            "extinction": extinction._asdict() if extinction is not None else None,
            "extinction_threshold": trajectory.extinction_threshold,
            "audit": asdict(trajectory.audit) if trajectory.audit is not None else None,
        }

    def load_run(self, run_dir: Path) -> LoadedRun:
        """
        Rebuild a trajectory from its run directory.

        The operator is rebuilt from the stored config; norm_Hum is recomputed
        from the snapshots.

        Raises:
            FileNotFoundError: If the manifest or a data file is missing
            StorageFormatError: If a file is corrupt or inconsistent
        """
        manifest = storage.read_json(run_dir / storage.MANIFEST_FILE)
        try:
            config = ExperimentConfig.model_validate(manifest["config"])
            seed = int(manifest["seed"])
            threshold = float(manifest["extinction_threshold"])
            signed = bool(manifest["signed_input"])
            raw_extinction = manifest["extinction"]
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            raise StorageFormatError(f"{run_dir}: invalid manifest ({e})") from e

        op = self.build_operator(config)
        stored = storage.read_run(run_dir, op.grid, NORM_COLUMNS)
        snapshots = tuple(Field(values, op.grid) for values in stored.snapshots)
        norms = dict(stored.norms)
        norms["norm_Hum"] = compute_norm_series(snapshots, op, config.m, config.lp)["norm_Hum"]

        extinction = None
        if raw_extinction is not None:
            t_fit = raw_extinction.get("t_fit")
            extinction = ExtinctionEstimate(
                t_hat=float(raw_extinction["t_hat"]),
                t_fit=None if t_fit is None else float(t_fit),
            )
        audit = manifest.get("audit")
        trajectory = Trajectory(
            operator=op,
            m=config.m,
            lp=config.lp,
            times=stored.times,
            snapshots=snapshots,
            norm_series=norms,
            trace=StepTrace(t=stored.trace[:, 0], linf=stored.trace[:, 1], l1pm=stored.trace[:, 2]),
            extinction_threshold=threshold,
            extinction=extinction,
            signed_input=signed,
            newton_tol=config.solver.newton_tol,
            audit=StepAudit(**audit) if audit else None,
        )
        return LoadedRun(run_dir=run_dir, config=config, seed=seed, trajectory=trajectory)

    def run_checks(
        self, loaded: LoadedRun, checks: list[CheckConfig]
    ) -> list[tuple[CheckConfig, InequalityReport]]:
        """Run checks against a loaded run; partner and refined params name other run dirs."""
        results = []
        for check in checks:
            params = dict(check.params)
            runs = {key: self.load_run(Path(params.pop(key))).trajectory for key in RUN_PARAM_KEYS if key in params}
            sobolev_S = params.pop("sobolev_S", None)
            if sobolev_S == "estimate":
                sobolev_S = self._estimate_sobolev(loaded)
            context = CheckContext(
                trajectory=loaded.trajectory,
                operator=loaded.trajectory.operator,
                partner=runs.get("partner"),
                refined=runs.get("refined"),
                sobolev_S=None if sobolev_S is None else float(sobolev_S),
                seed=loaded.seed,
            )
            report = run_check(check.name, context, params)
            logger.info("Check %s: %s", check.name, report.verdict)
            results.append((check, report))
        return results

    def _estimate_sobolev(self, loaded: LoadedRun) -> float | None:
        op = loaded.trajectory.operator
        constants = estimate_functional_constants(
            op, op.green, op.grid.dim, op.spec.s, seed=loaded.seed
        )
        return constants.sobolev_S

    def verify(self, run_dir: Path, checks: list[CheckConfig] | None = None) -> VerifyResult:
        """
        Run checks on a stored run and write one report per check plus summary.csv.

        Checks default to the ones listed in the run's config, and to every
        registered check when that list is empty.
        """
        loaded = self.load_run(run_dir)
        if not checks:
            checks = loaded.config.checks or [CheckConfig(name=name) for name in CHECKS]

        report_dir = run_dir / storage.REPORT_DIR
        reports = []
        summary_rows = []
        for index, (check, report) in enumerate(self.run_checks(loaded, checks)):
            payload = {
                **report.to_json(),
                "explicit": report.explicit,
                "tolerance": report.tolerance,
                "params": check.params,
            }
            storage.write_report(
                report_dir, f"{index:02d}_{check.name}", payload, report_rows(report)
            )
            summary_rows.append(
                (
                    report.name,
                    str(report.verdict),
                    report.explicit,
                    report.empirical_constant,
                    report.theoretical_constant,
                    report.n_records,
                )
            )
            reports.append(report)
        storage.write_csv(run_dir / storage.SUMMARY_FILE, storage.SUMMARY_HEADER, summary_rows)

        violations = sum(1 for report in reports if report.has_explicit_violation())
        return VerifyResult(run_dir=run_dir, reports=reports, explicit_violations=violations)

    def sweep(
        self, plan: SweepPlan, base: ExperimentConfig, *, resume: bool = False
    ) -> SweepResult:
        """
        Run flow and smoothing check for every cell of a plan.

        Cells run in a process pool when parallelism > 1; the phase CSV is
        written once by this process after all cells return. With resume,
        cells whose run directory is complete are verified without re-solving.
        """
        tasks = [
            SweepTask(index=index, params=params, base=base, settings=self.settings, resume=resume)
            for index, params in enumerate(plan.cells())
        ]
        logger.info("Sweeping %d cells with parallelism %d", len(tasks), plan.parallelism)
        if plan.parallelism == 1:
            cells = [run_sweep_cell(task) for task in tasks]
        else:
            with ProcessPoolExecutor(max_workers=plan.parallelism) as pool:
                cells = list(pool.map(run_sweep_cell, tasks))

        sweep_dir = (base.output_dir or self.settings.output_root) / f"sweep-{sweep_digest(plan, base)}"
        sweep_dir.mkdir(parents=True, exist_ok=True)
        phase_path = sweep_dir / storage.PHASE_FILE
        storage.write_csv(
            phase_path,
            storage.PHASE_HEADER,
            ((c.m, c.s, c.p, c.kind, c.n, c.verdict, c.kappa_hat, c.t_fit) for c in cells),
        )
        refinements = refinement_rows(cells)
        drift_path = None
        if refinements:
            drift_path = sweep_dir / storage.DRIFT_FILE
            storage.write_csv(drift_path, storage.DRIFT_HEADER, refinements)
        result = SweepResult(cells=cells, phase_path=phase_path, refinements=refinements, drift_path=drift_path)
        if result.failed:
            logger.warning("%d of %d sweep cells failed", result.failed, len(cells))
        return result


def refinement_rows(cells: list[SweepCell]) -> tuple[RefinementRow, ...]:
    """Pair each finished cell with the next finer n that shares its m, s, p and kind."""
    groups: dict[tuple[float, float, float, str], list[SweepCell]] = {}
    for cell in cells:
        if cell.error is None:
            groups.setdefault((cell.m, cell.s, cell.p, cell.kind), []).append(cell)

    rows = []
    for (m, s, p, kind), group in groups.items():
        ladder = sorted(group, key=lambda c: c.n)
        for coarse, fine in zip(ladder, ladder[1:]):
            if fine.n == coarse.n:
                continue
            drift = smoothing_drift(coarse.kappa_hat, fine.kappa_hat)
            rows.append(RefinementRow(m, s, p, kind, coarse.n, fine.n, coarse.kappa_hat, fine.kappa_hat, drift))
            logger.debug("kappa_hat drift %.3g for m=%g s=%g p=%g %s n=%d->%d", drift, m, s, p, kind, coarse.n, fine.n)
    return tuple(rows)


class SweepTask(NamedTuple):
    """Everything a worker process needs for one cell."""

    index: int
    params: dict[str, Any]
    base: ExperimentConfig
    settings: Settings
    resume: bool


def sweep_digest(plan: SweepPlan, base: ExperimentConfig) -> str:
    canonical = json.dumps(
        {"plan": plan.model_dump(mode="json"), "base": base.config_hash()}, sort_keys=True
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def cell_config(base: ExperimentConfig, params: dict[str, Any]) -> ExperimentConfig:
    """Apply a cell's m, s, kind and n to the base config; the local kind forces s = 1."""
    overrides = {key: params[key] for key in ("m", "s", "kind", "n") if key in params}
    if OperatorKind(overrides.get("kind", base.operator.kind)) is OperatorKind.LOCAL:
        overrides["s"] = 1.0
    return base.with_overrides(**overrides)


def run_sweep_cell(task: SweepTask) -> SweepCell:
    """Worker entry point; failures are recorded on the returned cell."""
    p = float(task.params.get("p", 1.0))
    kind = str(task.params.get("kind", task.base.operator.kind))
    blank = SweepCell(
        index=task.index,
        m=float(task.params.get("m", task.base.m)),
        s=float(task.params.get("s", task.base.operator.s)),
        p=p,
        kind=kind,
        n=int(task.params.get("n", task.base.grid.n)),
        verdict="failed",
        kappa_hat=math.nan,
        t_fit=None,
        run_dir="",
    )
    service = ExperimentService(task.settings)
    try:
        config = cell_config(task.base, task.params)
        run_dir = service.run_dir_for(config)
        if task.resume and storage.is_complete(run_dir):
            logger.info("Resuming cell %d from %s", task.index, run_dir)
        else:
            service.solve(config)
        loaded = service.load_run(run_dir)
        ((_, report),) = service.run_checks(
            loaded, [CheckConfig(name=SWEEP_CHECK, params={"p": p})]
        )
    except (FfdeError, ValueError, OSError) as e:
        logger.error("Sweep cell %d failed: %s", task.index, e)
        return blank._replace(error=str(e))

    extinction = loaded.trajectory.extinction
    return blank._replace(
        s=config.operator.s,
        verdict=str(report.verdict),
        kappa_hat=report.empirical_constant,
        t_fit=extinction.t_fit if extinction is not None else None,
        run_dir=str(run_dir),
    )


def report_rows(report: InequalityReport, prefix: str = "") -> list[tuple[str, float, float, float]]:
    """Records of a report and its children; child labels are prefixed with the child name."""
    rows = [(prefix + r.label, r.lhs, r.rhs, r.ratio) for r in report.records]
    for child in report.children:
        rows.extend(report_rows(child, f"{prefix}{child.name}/"))
    return rows


def _fmt(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "none"
    return f"{value:.6g}"


def format_extinction_line(trajectory: Trajectory) -> str:
    """The `T_hat=… T_fit=…` summary line of a solve."""
    extinction = trajectory.extinction
    if extinction is None:
        return f"T_hat=none T_fit=none (no extinction before t={trajectory.times[-1]:.6g})"
    return f"T_hat={_fmt(extinction.t_hat)} T_fit={_fmt(extinction.t_fit)}"


def get_verdict_display(verdict: Verdict | str) -> str:
    """Get a CLI-friendly display string for a verdict."""
    verdict = Verdict(verdict)
    if verdict is Verdict.HOLDS:
        return "✅ holds"
    if verdict is Verdict.HOLDS_WITH_CONSTANT:
        return "📏 holds with constant"
    if verdict is Verdict.VIOLATED:
        return "❌ violated"
    return "➖ not applicable"


def format_verify_summary(result: VerifyResult) -> str:
    """Format the reports of one verify run."""
    lines = ["━" * 50, "📊 Verification Summary", "━" * 50]
    for report in result.reports:
        constant = _fmt(report.empirical_constant)
        lines.append(f"  {report.name.ljust(28)} → {get_verdict_display(report.verdict)} (C={constant})")
        if report.hypothesis_note:
            lines.append(f"  {'':28}   {report.hypothesis_note}")
    lines.append("")
    if result.explicit_violations:
        lines.append(f"❌ Explicit-constant violations: {result.explicit_violations}")
    else:
        lines.append("✅ No explicit-constant violations")
    lines.append("━" * 50)
    return "\n".join(lines)


def format_operator_record(record: dict[str, Any]) -> str:
    lines = ["━" * 50, f"🧮 Operator {record['kind']} (s={record['s']:g}, gamma={record['gamma']:g})", "━" * 50]
    for key in ("dim", "n", "lambda1", "c0_hat", "c1_hat", "gamma_hat", "sobolev_S", "hls_H"):
        value = record[key]
        shown = _fmt(value) if isinstance(value, float) or value is None else str(value)
        lines.append(f"  {key.ljust(12)} {shown}")
    lines.append("━" * 50)
    return "\n".join(lines)


def format_exponent_table(table: ExponentTable, p_values: list[float]) -> str:
    """Aligned text view of an exponent table with theta at the requested p."""
    data = table.to_dict()
    lines = ["━" * 50, f"📐 Exponents for N={table.N}, s={table.s:g}, m={table.m:g}, gamma={table.gamma:g}", "━" * 50]
    for key, value in data.items():
        if key in ("N", "s", "m", "gamma"):
            continue
        shown = _fmt(value) if isinstance(value, float) or value is None else str(value)
        lines.append(f"  {key.ljust(20)} {shown}")
    for p in p_values:
        theta = table.theta(p)
        theta_gamma = table.theta_gamma(p)
        lines.append(
            f"  theta(p={p:g})".ljust(22)
            + f" {'pole' if is_pole(theta) else _fmt(theta)}"
            + f"   theta_gamma {'pole' if is_pole(theta_gamma) else _fmt(theta_gamma)}"
        )
    lines.append("━" * 50)
    return "\n".join(lines)


def format_sweep_summary(result: SweepResult) -> str:
    lines = ["━" * 50, "🗺️  Sweep Summary", "━" * 50, f"Cells: {len(result.cells)}"]
    counts: dict[str, int] = {}
    for cell in result.cells:
        counts[cell.verdict] = counts.get(cell.verdict, 0) + 1
    for verdict, count in sorted(counts.items()):
        lines.append(f"  {verdict.ljust(22)} {count}")
    lines.append(f"📄 Phase diagram: {result.phase_path}")
    if result.drift_path is not None:
        stable = sum(1 for row in result.refinements if row.drift <= DRIFT_LIMIT)
        lines.append(f"📏 Refinement drift: {stable}/{len(result.refinements)} pairs within {DRIFT_LIMIT:g}x")
        lines.append(f"📄 Drift table: {result.drift_path}")
    lines.append("━" * 50)
    return "\n".join(lines)
