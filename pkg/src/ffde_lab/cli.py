"""
Command-line interface for the fractional fast diffusion lab.

Subcommands build operators, run flows, verify stored runs, sweep parameters
and print the critical exponents. Every config key can come from a TOML file
given with --config and be overridden by a flag.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Annotated, Any

import typer
from pydantic import ValidationError

from ffde_lab.constants import critical_exponents
from ffde_lab.core import (
    ExperimentService,
    format_exponent_table,
    format_extinction_line,
    format_operator_record,
    format_sweep_summary,
    format_verify_summary,
)
from ffde_lab.errors import FfdeError
from ffde_lab.flow import DtPolicy
from ffde_lab.operators import OperatorKind
from ffde_lab.settings import (
    CheckConfig,
    DatumKind,
    ExperimentConfig,
    Settings,
    SweepMode,
    SweepPlan,
    parse_axis,
)
from ffde_lab.storage import json_safe

# Create the Typer app
app = typer.Typer(
    name="ffde",
    help="Fractional fast diffusion lab - simulate du/dt = -A u^m and check its estimates.",
)

ConfigOption = Annotated[
    Path | None, typer.Option("--config", "-c", help="TOML experiment config")
]
KindOption = Annotated[OperatorKind | None, typer.Option("--kind", help="Operator kind")]
SOption = Annotated[float | None, typer.Option("--s", help="Fractional order s")]
DimOption = Annotated[int | None, typer.Option("--dim", help="Spatial dimension (1 or 2)")]
NOption = Annotated[int | None, typer.Option("--n", help="Nodes per axis")]
MOption = Annotated[float | None, typer.Option("--m", help="Nonlinearity exponent in (0, 1)")]
NormalizeOption = Annotated[
    bool | None, typer.Option("--normalize/--no-normalize", help="Rescale A so that lambda_1 = 1")
]
SeedOption = Annotated[int | None, typer.Option("--seed", help="Seed (FFDE_SEED wins)")]
OutputOption = Annotated[
    Path | None, typer.Option("--output-dir", "-o", help="Root directory of run outputs")
]


def version_callback(value: bool) -> None:
    """Print version information and exit."""
    if value:
        from ffde_lab import __version__

        print(f"ffde-lab version: {__version__}")
        raise typer.Exit()


def _load_settings() -> Settings:
    """Load settings with error handling."""
    try:
        return Settings()
    except ValidationError as e:
        print(f"❌ Error loading settings: {e}", file=sys.stderr)
        print("   Check the FFDE_* environment variables and .env file.", file=sys.stderr)
        raise typer.Exit(code=1) from e


def _load_config(config_path: Path | None, **flags: Any) -> ExperimentConfig:
    """Read the config file, apply flag overrides, and map failures to exit codes."""
    try:
        base = ExperimentConfig.from_toml(config_path) if config_path else ExperimentConfig()
        return base.with_overrides(**flags)
    except ValidationError as e:
        raise typer.BadParameter(str(e)) from e
    except (FileNotFoundError, FfdeError) as e:
        print(f"❌ Error loading config: {e}", file=sys.stderr)
        raise typer.Exit(code=1) from e


def _parse_param(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise typer.BadParameter(f"Parameters look like key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


@app.callback()
def main(
    version: Annotated[
        bool,
        typer.Option("--version", "-v", callback=version_callback, help="Show version"),
    ] = False,
    debug: Annotated[bool, typer.Option("--debug", help="Enable debug logging")] = False,
) -> None:
    """Fractional fast diffusion lab - simulate du/dt = -A u^m and check its estimates."""
    if debug:
        logging.basicConfig(level=logging.DEBUG)


@app.command("operator")
def operator_command(
    config: ConfigOption = None,
    kind: KindOption = None,
    s: SOption = None,
    dim: DimOption = None,
    n: NOption = None,
    normalize: NormalizeOption = None,
    seed: SeedOption = None,
    output_dir: OutputOption = None,
    starts: Annotated[
        int, typer.Option("--starts", min=0, help="Random starts of the S_A and H_A estimates")
    ] = 50,
    out: Annotated[Path | None, typer.Option("--out", help="Path of the JSON record")] = None,
) -> None:
    """Build an operator and write its spectral and kernel record."""
    experiment = _load_config(
        config, kind=kind, s=s, dim=dim, n=n, normalize=normalize, seed=seed, output_dir=output_dir
    )
    service = ExperimentService(_load_settings())
    print(f"🔍 Building {experiment.operator.kind} operator on n={experiment.grid.n}...")

    try:
        summary = service.describe_operator(experiment, starts=starts)
        path = service.write_operator_record(experiment, summary, out)
    except (FfdeError, OSError) as e:
        print(f"❌ Error building operator: {e}", file=sys.stderr)
        raise typer.Exit(code=1) from e

    print(format_operator_record(summary.record))
    print(f"📄 Record written to {path}")


@app.command("solve")
def solve_command(
    config: ConfigOption = None,
    kind: KindOption = None,
    s: SOption = None,
    dim: DimOption = None,
    n: NOption = None,
    normalize: NormalizeOption = None,
    m: MOption = None,
    lp: Annotated[float | None, typer.Option("--lp", help="Exponent of the norm_Lp column")] = None,
    datum: Annotated[DatumKind | None, typer.Option("--datum", help="Initial datum")] = None,
    scale: Annotated[float | None, typer.Option("--scale", help="Initial datum scale")] = None,
    datum_path: Annotated[
        Path | None, typer.Option("--datum-path", help="CSV of a custom_csv datum")
    ] = None,
    dt: Annotated[float | None, typer.Option("--dt", help="Initial time step")] = None,
    dt_policy: Annotated[DtPolicy | None, typer.Option("--dt-policy", help="Step policy")] = None,
    t_max: Annotated[float | None, typer.Option("--t-max", help="Final time")] = None,
    newton_tol: Annotated[float | None, typer.Option("--newton-tol", help="Newton tolerance")] = None,
    audit: Annotated[
        bool | None, typer.Option("--audit/--no-audit", help="Audit every step")
    ] = None,
    seed: SeedOption = None,
    output_dir: OutputOption = None,
) -> None:
    """Run the flow to extinction and write the run directory."""
    experiment = _load_config(
        config,
        kind=kind,
        s=s,
        dim=dim,
        n=n,
        normalize=normalize,
        m=m,
        lp=lp,
        datum=datum,
        scale=scale,
        datum_path=datum_path,
        dt=dt,
        dt_policy=dt_policy,
        t_max=t_max,
        newton_tol=newton_tol,
        audit=audit,
        seed=seed,
        output_dir=output_dir,
    )
    service = ExperimentService(_load_settings())
    print(
        f"🔍 Solving m={experiment.m:g} with {experiment.operator.kind} "
        f"s={experiment.operator.s:g} on n={experiment.grid.n}..."
    )

    try:
        result = service.solve(experiment)
    except (FfdeError, OSError) as e:
        print(f"❌ Solver failed (partial output kept): {e}", file=sys.stderr)
        raise typer.Exit(code=1) from e

    if result.trajectory.signed_input:
        print("⚠️  Initial datum changed sign; |u0| was run")
    print(format_extinction_line(result.trajectory))
    print(f"📁 Run written to {result.run_dir}")


@app.command("verify")
def verify_command(
    run_dir: Annotated[Path, typer.Argument(help="Run directory holding manifest.json")],
    check: Annotated[
        list[str] | None, typer.Option("--check", help="Check to run (repeatable)")
    ] = None,
    param: Annotated[
        list[str] | None,
        typer.Option("--param", help="key=value passed to every --check (repeatable)"),
    ] = None,
) -> None:
    """Run checks on a stored run; exits 1 if an explicit-constant check is violated."""
    params = dict(_parse_param(item) for item in param or [])
    try:
        checks = [CheckConfig(name=name, params=params) for name in check or []]
    except ValidationError as e:
        raise typer.BadParameter(str(e)) from e

    service = ExperimentService(_load_settings())
    print(f"🔍 Verifying {run_dir}...")
    try:
        result = service.verify(run_dir, checks)
    except FileNotFoundError as e:
        print(f"❌ Error loading run: {e}", file=sys.stderr)
        raise typer.Exit(code=1) from e
    except (FfdeError, OSError) as e:
        print(f"❌ Verification failed: {e}", file=sys.stderr)
        raise typer.Exit(code=1) from e

    print(format_verify_summary(result))
    if result.explicit_violations:
        raise typer.Exit(code=1)


@app.command("sweep")
def sweep_command(
    axis: Annotated[
        list[str] | None, typer.Option("--axis", help="Sweep axis name=v1,v2 (repeatable)")
    ] = None,
    mode: Annotated[SweepMode, typer.Option("--mode", help="Combine axes")] = SweepMode.CARTESIAN,
    parallelism: Annotated[
        int | None, typer.Option("--parallelism", "-j", min=1, help="Worker processes")
    ] = None,
    resume: Annotated[
        bool, typer.Option("--resume", help="Skip cells with a complete run directory")
    ] = False,
    config: ConfigOption = None,
    output_dir: OutputOption = None,
) -> None:
    """Run flow and smoothing check over a parameter grid and write phase.csv."""
    if not axis:
        raise typer.BadParameter("At least one --axis is required")
    settings = _load_settings()
    base = _load_config(config, output_dir=output_dir)
    try:
        plan = SweepPlan(
            axes=dict(parse_axis(item) for item in axis),
            mode=mode,
            parallelism=parallelism or settings.parallelism,
            cell_cap=settings.sweep_cell_cap,
        )
    except ValueError as e:
        raise typer.BadParameter(str(e)) from e

    service = ExperimentService(settings)
    print(f"🔍 Sweeping {plan.size} cells ({plan.mode})...")
    try:
        result = service.sweep(plan, base, resume=resume)
    except OSError as e:
        print(f"❌ Sweep failed: {e}", file=sys.stderr)
        raise typer.Exit(code=1) from e

    print(format_sweep_summary(result))
    if result.too_many_failures:
        print(f"❌ {result.failed} of {len(result.cells)} cells failed", file=sys.stderr)
        raise typer.Exit(code=1)


@app.command("constants")
def constants_command(
    dim: Annotated[int, typer.Option("--N", help="Spatial dimension N")] = 1,
    s: Annotated[float, typer.Option("--s", help="Fractional order s")] = 0.75,
    m: Annotated[float, typer.Option("--m", help="Nonlinearity exponent")] = 0.5,
    gamma: Annotated[float, typer.Option("--gamma", help="Boundary exponent")] = 1.0,
    p: Annotated[
        list[float] | None, typer.Option("--p", help="Evaluate theta_p here (repeatable)")
    ] = None,
    as_json: Annotated[bool, typer.Option("--json", help="Print JSON instead of text")] = False,
) -> None:
    """Print the critical exponents for (N, s, m, gamma)."""
    try:
        table = critical_exponents(dim, s, m, gamma)
    except ValueError as e:
        raise typer.BadParameter(str(e)) from e

    if as_json:
        print(json.dumps(json_safe(table.to_dict()), indent=2))
    else:
        print(format_exponent_table(table, p or []))


if __name__ == "__main__":
    app()
