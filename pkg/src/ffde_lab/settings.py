"""
Configuration for the fractional fast diffusion lab.

Settings holds the environment-level knobs (FFDE_* variables or .env).
ExperimentConfig describes one run and is read from a TOML file with
command-line overrides; SweepPlan describes a parameter sweep over runs.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ffde_lab.errors import StorageFormatError, UnknownCheck
from ffde_lab.flow import SolverConfig
from ffde_lab.operators import OperatorKind, OperatorSpec
from ffde_lab.verify import CHECKS

DEFAULT_SEED = 20240601
SWEEP_AXES = ("m", "s", "p", "kind", "n")


class Settings(BaseSettings):
    """
    Lab configuration with environment variable support.

    All settings can be configured via FFDE_* environment variables or a .env
    file. FFDE_SEED, when set, overrides the seed of every experiment config.

    Example:
        >>> settings = Settings()
        >>> settings.output_root  # Loaded from FFDE_OUTPUT_ROOT
        PosixPath('runs')
    """

    model_config = SettingsConfigDict(
        env_prefix="FFDE_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    seed: int | None = Field(
        default=None,
        description="Seed overriding every experiment config seed",
    )

    output_root: Path = Field(
        default=Path("runs"),
        description="Directory that receives one subdirectory per run",
    )

    # Feature flags and limits
    enable_2d_kernels: bool = Field(
        default=False,
        description="Allow the dense 2D RFL/CFL kernel assembly",
    )

    sweep_cell_cap: int = Field(
        default=1024,
        ge=1,
        description="Maximum number of cells in one sweep",
    )

    parallelism: int = Field(
        default=1,
        ge=1,
        description="Default number of sweep worker processes",
    )

    max_nodes: int = Field(
        default=4096,
        ge=1,
        description="Largest grid size M accepted for dense storage",
    )


class OperatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: OperatorKind = OperatorKind.RFL
    s: float = Field(default=0.75, gt=0.0, le=1.0)
    normalize_lambda1: bool = Field(
        default=False,
        description="Rescale the operator so that lambda_1 = 1",
    )

    @model_validator(mode="after")
    def _check_spec(self) -> OperatorConfig:
        self.to_spec()
        return self

    def to_spec(self) -> OperatorSpec:
        return OperatorSpec(self.kind, self.s)


class GridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(default=1, ge=1, le=2)
    n: int = Field(default=64, ge=1)


class DatumKind(StrEnum):
    EIGENFUNCTION = "eigenfunction"
    POINT_MASS = "point_mass"
    SEPARABLE = "separable"
    BUMP = "bump"
    CONSTANT = "constant"
    CUSTOM_CSV = "custom_csv"


class DatumConfig(BaseModel):
    """Initial datum: scale times the chosen shape (custom_csv reads `path`)."""

    model_config = ConfigDict(extra="forbid")

    kind: DatumKind = DatumKind.EIGENFUNCTION
    scale: float = Field(default=1.0, gt=0.0)
    path: Path | None = None

    @model_validator(mode="after")
    def _check_path(self) -> DatumConfig:
        if self.kind is DatumKind.CUSTOM_CSV and self.path is None:
            raise ValueError("custom_csv datum needs a path")
        return self


class CheckConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known_check(cls, name: str) -> str:
        if name not in CHECKS:
            raise UnknownCheck(f"Unknown check: {name}. Available: {', '.join(sorted(CHECKS))}")
        return name


# Flat command-line flag -> path inside ExperimentConfig
_OVERRIDE_PATHS: dict[str, tuple[str, ...]] = {
    "kind": ("operator", "kind"),
    "s": ("operator", "s"),
    "normalize": ("operator", "normalize_lambda1"),
    "dim": ("grid", "dim"),
    "n": ("grid", "n"),
    "m": ("m",),
    "lp": ("lp",),
    "datum": ("initial_datum", "kind"),
    "scale": ("initial_datum", "scale"),
    "datum_path": ("initial_datum", "path"),
    "dt": ("solver", "dt_init"),
    "dt_policy": ("solver", "dt_policy"),
    "t_max": ("solver", "t_max"),
    "newton_tol": ("solver", "newton_tol"),
    "audit": ("solver", "audit_energy"),
    "seed": ("seed",),
    "output_dir": ("output_dir",),
}


class ExperimentConfig(BaseModel):
    """
    One experiment: operator, grid, datum, solver and the checks to run.

    Example:
        >>> config = ExperimentConfig().with_overrides(kind="sfl", s=0.5, n=128)
        >>> config.operator.kind, config.grid.n
        (<OperatorKind.SFL: 'sfl'>, 128)
    """

    model_config = ConfigDict(extra="forbid")

    operator: OperatorConfig = Field(default_factory=OperatorConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    m: float = Field(default=0.5, gt=0.0, lt=1.0)
    lp: float = Field(default=2.0, ge=1.0, description="Exponent of the norm_Lp column")
    initial_datum: DatumConfig = Field(default_factory=DatumConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    checks: list[CheckConfig] = Field(default_factory=list)
    output_dir: Path | None = None
    seed: int | None = None

    @classmethod
    def from_toml(cls, path: Path) -> ExperimentConfig:
        """
        Load a UTF-8 TOML config file.

        Raises:
            FileNotFoundError: If the file does not exist
            StorageFormatError: If the file is not valid TOML
            pydantic.ValidationError: If a value is out of range
        """
        try:
            with path.open("rb") as handle:
                data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as e:
            raise StorageFormatError(f"Invalid config file {path}: {e}") from e
        return cls.model_validate(data)

    def with_overrides(self, **flags: Any) -> ExperimentConfig:
        """Apply flat command-line flags; None values leave the file value."""
        data = self.model_dump(mode="json")
        for key, value in flags.items():
            if value is None:
                continue
            if key not in _OVERRIDE_PATHS:
                raise ValueError(f"Unknown override: {key}")
            *parents, leaf = _OVERRIDE_PATHS[key]
            target = data
            for parent in parents:
                target = target[parent]
            target[leaf] = str(value) if isinstance(value, Path) else value
        return ExperimentConfig.model_validate(data)

    def effective_seed(self, settings: Settings) -> int:
        """FFDE_SEED first, then the config seed, then the package default."""
        if settings.seed is not None:
            return settings.seed
        return self.seed if self.seed is not None else DEFAULT_SEED

    def config_hash(self) -> str:
        """Content hash of the canonical JSON form; names the run directory."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class SweepMode(StrEnum):
    CARTESIAN = "cartesian"
    ZIP = "zip"


def parse_axis(text: str) -> tuple[str, list[Any]]:
    """
    Parse a `name=v1,v2,...` sweep axis.

    Raises:
        ValueError: If the name is unknown or a value does not parse

    Example:
        >>> parse_axis("m=0.2,0.5")
        ('m', [0.2, 0.5])
    """
    name, sep, raw = text.partition("=")
    name = name.strip()
    if not sep or name not in SWEEP_AXES:
        raise ValueError(f"Axis must look like name=v1,v2 with name in {SWEEP_AXES}, got {text!r}")
    items = [item.strip() for item in raw.split(",") if item.strip()]
    if name == "kind":
        return name, [OperatorKind(item) for item in items]
    if name == "n":
        return name, [int(item) for item in items]
    return name, [float(item) for item in items]


class SweepPlan(BaseModel):
    """Axes of a parameter sweep, combined as a cartesian product or zipped."""

    model_config = ConfigDict(extra="forbid")

    axes: dict[str, list[Any]]
    mode: SweepMode = SweepMode.CARTESIAN
    parallelism: int = Field(default=1, ge=1)
    cell_cap: int = Field(default=1024, ge=1)

    @field_validator("axes")
    @classmethod
    def _check_axes(cls, axes: dict[str, list[Any]]) -> dict[str, list[Any]]:
        if not axes:
            raise ValueError("Sweep needs at least one axis")
        for name, values in axes.items():
            if name not in SWEEP_AXES:
                raise ValueError(f"Unknown sweep axis: {name}")
            if not values:
                raise ValueError(f"Sweep axis {name} is empty")
        return axes

    @model_validator(mode="after")
    def _check_size(self) -> SweepPlan:
        lengths = [len(values) for values in self.axes.values()]
        if self.mode is SweepMode.ZIP and len(set(lengths)) > 1:
            raise ValueError(f"Zip mode needs equal axis lengths, got {lengths}")
        if self.size > self.cell_cap:
            raise ValueError(f"Sweep has {self.size} cells, cap is {self.cell_cap}")
        return self

    @property
    def size(self) -> int:
        lengths = [len(values) for values in self.axes.values()]
        if self.mode is SweepMode.ZIP:
            return lengths[0]
        return math.prod(lengths)

    def cells(self) -> list[dict[str, Any]]:
        names = list(self.axes)
        if self.mode is SweepMode.ZIP:
            rows = zip(*self.axes.values(), strict=True)
        else:
            rows = itertools.product(*self.axes.values())
        return [dict(zip(names, row, strict=True)) for row in rows]
